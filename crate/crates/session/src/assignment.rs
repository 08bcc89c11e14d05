//! Balanced task assignment for one participant group.
//!
//! Round orders: the six permutations of the three categories are paired
//! into 24 distinct six-round sequences (first half permutation `i`, second
//! half permutation `i + d` for `d` in 1..=4). Every sequence holds each
//! category twice and each category opens eight of the 24 sequences. The
//! list is shuffled per seed and cycled for other group sizes.
//!
//! Tasks: per category the pool is shuffled, followed by a copy rotated by
//! half its length, and participants take consecutive blocks of ten. The two
//! copies of a task sit at least half a pool apart, so nobody draws the same
//! task twice.

use std::collections::{BTreeMap, BTreeSet};

use atelier_core::{Task, TaskCategory};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROUNDS: usize = 6;
pub const TASKS_PER_ROUND: usize = 5;
pub const TASKS_PER_PARTICIPANT: usize = ROUNDS * TASKS_PER_ROUND;
/// Each task is done this many times per group.
pub const COVERAGE: usize = 2;

/// Participant group, shared with the bench's human-log prompters.
pub use atelier_core::bench::Strategy as Group;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub anon_id: String,
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub category: TaskCategory,
    pub task_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub rounds: Vec<Round>,
}

impl RoundPlan {
    pub fn total(&self) -> usize {
        self.rounds.iter().map(|r| r.task_ids.len()).sum()
    }

    pub fn task_at(&self, round: usize, index: usize) -> Option<&str> {
        self.rounds.get(round)?.task_ids.get(index).map(String::as_str)
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.rounds.iter().flat_map(|r| r.task_ids.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("{participants} participants x {TASKS_PER_PARTICIPANT} tasks must equal {COVERAGE} x {pool} pool tasks")]
    Cardinality { participants: usize, pool: usize },
    #[error("category {category} has {found} tasks, expected {expected}")]
    CategoryBalance {
        category: TaskCategory,
        found: usize,
        expected: usize,
    },
    #[error("at least 4 participants are needed")]
    TooFew,
    #[error("duplicate {0}")]
    Duplicate(String),
}

fn category_orders() -> Vec<[TaskCategory; ROUNDS]> {
    use TaskCategory::*;
    let perms = [
        [OpenEnded, Constrained, Imitation],
        [OpenEnded, Imitation, Constrained],
        [Constrained, OpenEnded, Imitation],
        [Constrained, Imitation, OpenEnded],
        [Imitation, OpenEnded, Constrained],
        [Imitation, Constrained, OpenEnded],
    ];
    let mut out = Vec::with_capacity(24);
    for i in 0..6 {
        for d in 1..=4 {
            let (a, b) = (perms[i], perms[(i + d) % 6]);
            out.push([a[0], a[1], a[2], b[0], b[1], b[2]]);
        }
    }
    out
}

/// Round plans for one group, keyed by anon id.
pub fn plan_group_assignment(
    group: &[Participant],
    pool: &[Task],
    seed: u64,
) -> Result<BTreeMap<String, RoundPlan>, PlanError> {
    let n = group.len();
    if n * TASKS_PER_PARTICIPANT != COVERAGE * pool.len() {
        return Err(PlanError::Cardinality {
            participants: n,
            pool: pool.len(),
        });
    }
    if n < 4 {
        return Err(PlanError::TooFew);
    }
    let mut seen = BTreeSet::new();
    for p in group {
        if !seen.insert(&p.anon_id) {
            return Err(PlanError::Duplicate(format!("participant {}", p.anon_id)));
        }
    }
    let mut seen = BTreeSet::new();
    for t in pool {
        if !seen.insert(&t.id) {
            return Err(PlanError::Duplicate(format!("task {}", t.id)));
        }
    }
    let per_category = pool.len() / TaskCategory::ALL.len();
    let rounds_per_category = ROUNDS / TaskCategory::ALL.len();
    let quota = rounds_per_category * TASKS_PER_ROUND;
    for category in TaskCategory::ALL {
        let found = pool.iter().filter(|t| t.category == category).count();
        if found != per_category {
            return Err(PlanError::CategoryBalance {
                category,
                found,
                expected: per_category,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut orders = category_orders();
    orders.shuffle(&mut rng);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);

    let mut drawn: BTreeMap<(usize, TaskCategory), Vec<String>> = BTreeMap::new();
    for category in TaskCategory::ALL {
        let mut ids: Vec<String> = pool.iter().filter(|t| t.category == category).map(|t| t.id.clone()).collect();
        ids.sort();
        ids.shuffle(&mut rng);
        let mut rotated = ids.clone();
        rotated.rotate_left(ids.len() / 2);
        let line: Vec<String> = ids.into_iter().chain(rotated).collect();
        for (slot, block) in line.chunks(quota).enumerate() {
            drawn.insert((slot, category), block.to_vec());
        }
    }

    let mut plans = BTreeMap::new();
    for (p, slot) in group.iter().zip(slots) {
        let order = orders[slot % orders.len()];
        let mut tasks = BTreeMap::new();
        for category in TaskCategory::ALL {
            let mut block = drawn[&(slot, category)].clone();
            block.shuffle(&mut rng);
            tasks.insert(category, block.into_iter());
        }
        let rounds = order
            .iter()
            .map(|c| Round {
                category: *c,
                task_ids: tasks.get_mut(c).into_iter().flat_map(|it| it.take(TASKS_PER_ROUND)).collect(),
            })
            .collect();
        plans.insert(p.anon_id.clone(), RoundPlan { rounds });
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_are_distinct_and_balanced() {
        let orders = category_orders();
        assert_eq!(orders.iter().collect::<BTreeSet<_>>().len(), 24);
        for o in &orders {
            for c in TaskCategory::ALL {
                assert_eq!(o.iter().filter(|x| **x == c).count(), 2);
            }
        }
        for c in TaskCategory::ALL {
            assert_eq!(orders.iter().filter(|o| o[0] == c).count(), 8);
        }
    }
}
