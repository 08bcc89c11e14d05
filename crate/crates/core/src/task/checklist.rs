use std::cmp::Ordering;
use std::collections::BTreeMap;

use thiserror::Error;

use super::{Checkpoint, Task};
use crate::image::Modality;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPair {
    pub pair_id: String,
    pub prompt: Checkpoint,
    pub image: Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairingError {
    #[error("pair {pair_id} has no {missing} checkpoint")]
    Orphan { pair_id: String, missing: Modality },
    #[error("pair {pair_id} has several {modality} checkpoints")]
    Ambiguous { pair_id: String, modality: Modality },
}

/// Groups a task's checklist into prompt/image pairs ordered by `pair_id`.
pub fn paired_checkpoints(task: &Task) -> Result<Vec<CheckpointPair>, PairingError> {
    let mut slots: BTreeMap<&str, (Option<&Checkpoint>, Option<&Checkpoint>)> = BTreeMap::new();
    for c in &task.checklist {
        let slot = slots.entry(c.pair_id.as_str()).or_default();
        let target = match c.modality {
            Modality::Prompt => &mut slot.0,
            Modality::Image => &mut slot.1,
        };
        if target.replace(c).is_some() {
            return Err(PairingError::Ambiguous {
                pair_id: c.pair_id.clone(),
                modality: c.modality,
            });
        }
    }
    let mut pairs = slots
        .into_iter()
        .map(|(pair_id, slot)| match slot {
            (Some(p), Some(i)) => Ok(CheckpointPair {
                pair_id: pair_id.to_string(),
                prompt: p.clone(),
                image: i.clone(),
            }),
            (None, _) => Err(PairingError::Orphan {
                pair_id: pair_id.to_string(),
                missing: Modality::Prompt,
            }),
            (_, None) => Err(PairingError::Orphan {
                pair_id: pair_id.to_string(),
                missing: Modality::Image,
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    pairs.sort_by(|a, b| compare_natural(&a.pair_id, &b.pair_id));
    Ok(pairs)
}

/// Orders strings treating embedded digit runs as numbers, so "2" < "10".
pub fn compare_natural(a: &str, b: &str) -> Ordering {
    let (mut x, mut y) = (a.as_bytes(), b.as_bytes());
    loop {
        match (x.first(), y.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(cx), Some(cy)) if cx.is_ascii_digit() && cy.is_ascii_digit() => {
                let nx = x.iter().take_while(|c| c.is_ascii_digit()).count();
                let ny = y.iter().take_while(|c| c.is_ascii_digit()).count();
                let dx = trim_zeros(&x[..nx]);
                let dy = trim_zeros(&y[..ny]);
                let ord = dx.len().cmp(&dy.len()).then_with(|| dx.cmp(dy));
                if ord != Ordering::Equal {
                    return ord;
                }
                x = &x[nx..];
                y = &y[ny..];
            }
            (Some(cx), Some(cy)) => {
                if cx != cy {
                    return cx.cmp(cy);
                }
                x = &x[1..];
                y = &y[1..];
            }
        }
    }
}

fn trim_zeros(digits: &[u8]) -> &[u8] {
    let n = digits.iter().take_while(|c| **c == b'0').count();
    &digits[n..]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{ContextTags, Sections, TaskCategory};

    fn cp(id: &str, modality: Modality, pair: &str) -> Checkpoint {
        Checkpoint {
            id: id.into(),
            modality,
            text: format!("text {id}"),
            pair_id: pair.into(),
        }
    }

    fn task(checklist: Vec<Checkpoint>) -> Task {
        Task {
            id: "t".into(),
            category: TaskCategory::OpenEnded,
            title: "t".into(),
            description: Some("d".into()),
            structured_constraints: Sections::default(),
            target_image: None,
            semantic_counts: Default::default(),
            constraint_counts: Default::default(),
            tags: ContextTags::default(),
            checklist,
        }
    }

    #[test]
    fn four_pairs_in_natural_order() {
        let mut list = Vec::new();
        for p in ["10", "2", "1", "3"] {
            list.push(cp(&format!("I{p}"), Modality::Image, p));
            list.push(cp(&format!("P{p}"), Modality::Prompt, p));
        }
        let pairs = paired_checkpoints(&task(list)).unwrap();
        let ids: Vec<_> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3", "10"]);
        assert!(pairs.iter().all(|p| p.prompt.modality == Modality::Prompt && p.image.modality == Modality::Image));
    }

    #[test]
    fn orphan_image_is_an_error() {
        let t = task(vec![
            cp("P1", Modality::Prompt, "1"),
            cp("I1", Modality::Image, "1"),
            cp("I2", Modality::Image, "2"),
        ]);
        assert_eq!(
            paired_checkpoints(&t),
            Err(PairingError::Orphan {
                pair_id: "2".into(),
                missing: Modality::Prompt
            })
        );
    }

    #[test]
    fn natural_ordering() {
        assert_eq!(compare_natural("a2", "a10"), Ordering::Less);
        assert_eq!(compare_natural("I9", "I10"), Ordering::Less);
        assert_eq!(compare_natural("b", "a"), Ordering::Greater);
        assert_eq!(compare_natural("01", "1"), Ordering::Less);
        assert_eq!(compare_natural("x", "x"), Ordering::Equal);
    }
}
