use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::image::{ImageRef, Modality};
use crate::task::{Task, TaskCategory};

/// Number of expert raters per gold item.
pub const RATERS: usize = 3;

/// One expert-annotated prompt/image pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub item_id: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<TaskCategory>,
    pub prompter_id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
    /// Per modality: one score vector per rater, in rubric dimension order.
    #[serde(default)]
    pub ratings: BTreeMap<Modality, Vec<Vec<u8>>>,
    /// Expert-corrected checkpoint verdicts.
    #[serde(default)]
    pub checkpoints: BTreeMap<Modality, BTreeMap<String, bool>>,
}

impl GoldItem {
    /// Mean of the three raters, per dimension.
    pub fn gold_scores(&self, modality: Modality) -> Option<Vec<f64>> {
        let raters = self.ratings.get(&modality)?;
        let dims = modality.dimensions().len();
        Some(
            (0..dims)
                .map(|d| raters.iter().map(|r| f64::from(r[d])).sum::<f64>() / raters.len() as f64)
                .collect(),
        )
    }

    fn check(&self) -> Result<(), MetaError> {
        let fail = |m: String| Err(MetaError::Input(format!("gold item {}: {m}", self.item_id)));
        for (modality, raters) in &self.ratings {
            if raters.len() != RATERS {
                return fail(format!("{modality} ratings need {RATERS} raters, found {}", raters.len()));
            }
            let dims = modality.dimensions().len();
            for (i, r) in raters.iter().enumerate() {
                if r.len() != dims {
                    return fail(format!("rater {} gave {} {modality} scores, expected {dims}", i + 1, r.len()));
                }
                if let Some(s) = r.iter().find(|s| !(1..=5).contains(*s)) {
                    return fail(format!("score {s} outside 1..5"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSet {
    pub items: Vec<GoldItem>,
}

impl GoldSet {
    pub fn load(path: &Path) -> Result<Self, MetaError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetaError::Io(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let set: GoldSet = serde_path_to_error::deserialize(de)
            .map_err(|e| MetaError::Input(format!("{}: {} at {}", path.display(), e.inner(), e.path())))?;
        set.check()?;
        Ok(set)
    }

    /// Shape checks: unique ids, three raters, full rubric vectors in range.
    pub fn check(&self) -> Result<(), MetaError> {
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if !seen.insert(&item.item_id) {
                return Err(MetaError::Input(format!("duplicate gold item {}", item.item_id)));
            }
            item.check()?;
        }
        Ok(())
    }

    /// Fills missing categories from the task corpus.
    pub fn attach_categories(&mut self, tasks: &[Task]) {
        let by_id: BTreeMap<&str, TaskCategory> = tasks.iter().map(|t| (t.id.as_str(), t.category)).collect();
        for item in &mut self.items {
            if item.category.is_none() {
                item.category = by_id.get(item.task_id.as_str()).copied();
            }
        }
    }

    /// Modalities with subjective ratings on at least one item.
    pub fn rated_modalities(&self) -> Vec<Modality> {
        let set: BTreeSet<Modality> = self.items.iter().flat_map(|i| i.ratings.keys().copied()).collect();
        set.into_iter().collect()
    }
}
