use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Task, TaskCategory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("category {category} has {available} tasks, {requested} requested")]
pub struct SampleError {
    pub category: TaskCategory,
    pub available: usize,
    pub requested: usize,
}

/// Draws `per_category` tasks from each category without replacement.
///
/// Output lists OE, then CO, then IM; within a category the original file
/// order is kept.
pub fn stratified_sample(tasks: &[Task], per_category: usize, seed: u64) -> Result<Vec<Task>, SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_category * TaskCategory::ALL.len());
    for category in TaskCategory::ALL {
        let pool: Vec<&Task> = tasks.iter().filter(|t| t.category == category).collect();
        if pool.len() < per_category {
            return Err(SampleError {
                category,
                available: pool.len(),
                requested: per_category,
            });
        }
        let mut picked = index::sample(&mut rng, pool.len(), per_category).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}
