#![allow(dead_code)]

use std::collections::BTreeMap;

use atelier_core::task::{ContextTags, Sections};
use atelier_core::{Task, TaskCategory};
use atelier_session::{Group, Participant};

pub fn synthetic_task(id: &str, category: TaskCategory) -> Task {
    Task {
        id: id.into(),
        category,
        title: format!("Task {id}"),
        description: (category != TaskCategory::Imitation).then(|| format!("Brief for {id}.")),
        structured_constraints: Sections::default(),
        target_image: None,
        semantic_counts: BTreeMap::new(),
        constraint_counts: BTreeMap::new(),
        tags: ContextTags::default(),
        checklist: Vec::new(),
    }
}

/// `per_category` tasks of each category.
pub fn pool(per_category: usize) -> Vec<Task> {
    TaskCategory::ALL
        .iter()
        .flat_map(|c| (0..per_category).map(move |i| synthetic_task(&format!("{}_{i:03}", c.code().to_lowercase()), *c)))
        .collect()
}

pub fn group(n: usize, g: Group) -> Vec<Participant> {
    (0..n)
        .map(|i| Participant {
            anon_id: format!("{}-{i:02}", g.as_str()),
            group: g,
        })
        .collect()
}
