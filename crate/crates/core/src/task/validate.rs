//! Category-specific composition bounds.
//!
//! Validation collects every violation instead of stopping at the first one,
//! so corpus authors can fix a task in one pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use super::{ChallengePrimitive, PrimitiveClass, Task, TaskCategory};
use crate::image::Modality;

pub const OE_MIN_SEMANTIC: u32 = 6;
pub const OE_MAX_SEMANTIC: u32 = 10;
pub const CO_MIN_SEMANTIC_KINDS: u32 = 3;
pub const CO_MAX_SEMANTIC_KINDS: u32 = 4;
pub const CO_MIN_CONSTRAINT_KINDS: usize = 3;
pub const CO_MAX_CONSTRAINT_KINDS: usize = 5;
/// Imitation checklist bounds, counted in checkpoint pairs.
pub const IM_MIN_PAIRS: usize = 10;
pub const IM_MAX_PAIRS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    #[error("semantic cue count below {min} (found {found})")]
    SemanticCountBelow { min: u32, found: u32 },
    #[error("semantic cue count above {max} (found {found})")]
    SemanticCountAbove { max: u32, found: u32 },
    #[error("OE tasks carry no constraint primitives ({primitive:?} = {count})")]
    ConstraintInOpenEnded { primitive: ChallengePrimitive, count: u32 },
    #[error("CO semantic primitive {primitive:?} must be 0 or 1 (found {count})")]
    SemanticNotBinary { primitive: ChallengePrimitive, count: u32 },
    #[error("CO tasks need {min}-{max} semantic primitive kinds (found {found})")]
    SemanticKindsOutOfRange { min: u32, max: u32, found: u32 },
    #[error("CO tasks need {min}-{max} active constraint kinds (found {found})")]
    ConstraintKindsOutOfRange { min: usize, max: usize, found: usize },
    #[error("IM excludes {} ({primitive:?})", primitive.name())]
    ExcludedFromImitation { primitive: ChallengePrimitive },
    #[error("IM checklist must hold {min}-{max} checkpoint pairs (found {found})")]
    ImitationChecklistSize { min: usize, max: usize, found: usize },
    #[error("{primitive:?} is a {expected} primitive but appears in {field}")]
    WrongPrimitiveClass {
        primitive: ChallengePrimitive,
        expected: &'static str,
        field: &'static str,
    },
    #[error("{category} tasks need a description")]
    MissingDescription { category: TaskCategory },
    #[error("IM tasks carry no description")]
    UnexpectedDescription,
    #[error("IM tasks need a target image")]
    MissingTargetImage,
    #[error("only IM tasks carry a target image")]
    UnexpectedTargetImage,
    #[error("only CO tasks carry structured constraints")]
    UnexpectedStructuredConstraints,
    #[error("checklist is empty")]
    EmptyChecklist,
    #[error("checkpoint {id} has empty text")]
    EmptyCheckpointText { id: String },
    #[error("duplicate checkpoint id {id}")]
    DuplicateCheckpointId { id: String },
    #[error("pair {pair_id} lacks a {missing} checkpoint")]
    UnpairedCheckpoint { pair_id: String, missing: Modality },
    #[error("pair {pair_id} has more than one {modality} checkpoint")]
    OverfullPair { pair_id: String, modality: Modality },
    #[error("unknown {dimension} tag {tag:?}")]
    UnknownTag { dimension: &'static str, tag: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub task_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_task(task: &Task) -> ValidationReport {
    let mut v = Vec::new();
    check_classes(task, &mut v);
    match task.category {
        TaskCategory::OpenEnded => check_open_ended(task, &mut v),
        TaskCategory::Constrained => check_constrained(task, &mut v),
        TaskCategory::Imitation => check_imitation(task, &mut v),
    }
    check_presentation(task, &mut v);
    check_checklist(task, &mut v);
    check_tags(task, &mut v);
    ValidationReport {
        task_id: task.id.clone(),
        violations: v,
    }
}

fn check_classes(task: &Task, v: &mut Vec<Violation>) {
    for p in task.semantic_counts.keys() {
        if p.class() != PrimitiveClass::Semantic {
            v.push(Violation::WrongPrimitiveClass {
                primitive: *p,
                expected: "constraint",
                field: "semantic_counts",
            });
        }
    }
    for p in task.constraint_counts.keys() {
        if p.class() != PrimitiveClass::Constraint {
            v.push(Violation::WrongPrimitiveClass {
                primitive: *p,
                expected: "semantic",
                field: "constraint_counts",
            });
        }
    }
}

fn check_open_ended(task: &Task, v: &mut Vec<Violation>) {
    let total = task.semantic_total();
    if total < OE_MIN_SEMANTIC {
        v.push(Violation::SemanticCountBelow {
            min: OE_MIN_SEMANTIC,
            found: total,
        });
    }
    if total > OE_MAX_SEMANTIC {
        v.push(Violation::SemanticCountAbove {
            max: OE_MAX_SEMANTIC,
            found: total,
        });
    }
    for (p, n) in &task.constraint_counts {
        if *n > 0 {
            v.push(Violation::ConstraintInOpenEnded {
                primitive: *p,
                count: *n,
            });
        }
    }
}

fn check_constrained(task: &Task, v: &mut Vec<Violation>) {
    for (p, n) in &task.semantic_counts {
        if *n > 1 {
            v.push(Violation::SemanticNotBinary {
                primitive: *p,
                count: *n,
            });
        }
    }
    let kinds = task.semantic_counts.values().filter(|n| **n > 0).count() as u32;
    if !(CO_MIN_SEMANTIC_KINDS..=CO_MAX_SEMANTIC_KINDS).contains(&kinds) {
        v.push(Violation::SemanticKindsOutOfRange {
            min: CO_MIN_SEMANTIC_KINDS,
            max: CO_MAX_SEMANTIC_KINDS,
            found: kinds,
        });
    }
    let active = task.active_constraint_kinds();
    if !(CO_MIN_CONSTRAINT_KINDS..=CO_MAX_CONSTRAINT_KINDS).contains(&active) {
        v.push(Violation::ConstraintKindsOutOfRange {
            min: CO_MIN_CONSTRAINT_KINDS,
            max: CO_MAX_CONSTRAINT_KINDS,
            found: active,
        });
    }
}

fn check_imitation(task: &Task, v: &mut Vec<Violation>) {
    use ChallengePrimitive::*;
    for (p, n) in task.semantic_counts.iter().chain(&task.constraint_counts) {
        if *n > 0 && matches!(p, S2 | S4 | C5) {
            v.push(Violation::ExcludedFromImitation { primitive: *p });
        }
    }
    let pairs: BTreeSet<&str> = task.checklist.iter().map(|c| c.pair_id.as_str()).collect();
    if !(IM_MIN_PAIRS..=IM_MAX_PAIRS).contains(&pairs.len()) {
        v.push(Violation::ImitationChecklistSize {
            min: IM_MIN_PAIRS,
            max: IM_MAX_PAIRS,
            found: pairs.len(),
        });
    }
}

fn check_presentation(task: &Task, v: &mut Vec<Violation>) {
    let has_description = task.description.as_deref().is_some_and(|d| !d.trim().is_empty());
    match task.category {
        TaskCategory::Imitation => {
            if task.description.is_some() {
                v.push(Violation::UnexpectedDescription);
            }
            if task.target_image.is_none() {
                v.push(Violation::MissingTargetImage);
            }
        }
        category => {
            if !has_description {
                v.push(Violation::MissingDescription { category });
            }
            if task.target_image.is_some() {
                v.push(Violation::UnexpectedTargetImage);
            }
        }
    }
    if task.category != TaskCategory::Constrained && !task.structured_constraints.is_empty() {
        v.push(Violation::UnexpectedStructuredConstraints);
    }
}

fn check_checklist(task: &Task, v: &mut Vec<Violation>) {
    if task.checklist.is_empty() {
        v.push(Violation::EmptyChecklist);
        return;
    }
    let mut seen = BTreeSet::new();
    let mut pairs: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for c in &task.checklist {
        if c.text.trim().is_empty() {
            v.push(Violation::EmptyCheckpointText { id: c.id.clone() });
        }
        if !seen.insert(c.id.as_str()) {
            v.push(Violation::DuplicateCheckpointId { id: c.id.clone() });
        }
        let slot = pairs.entry(c.pair_id.as_str()).or_default();
        match c.modality {
            Modality::Prompt => slot.0 += 1,
            Modality::Image => slot.1 += 1,
        }
    }
    for (pair_id, (prompts, images)) in pairs {
        for (count, modality) in [(prompts, Modality::Prompt), (images, Modality::Image)] {
            if count == 0 {
                v.push(Violation::UnpairedCheckpoint {
                    pair_id: pair_id.to_string(),
                    missing: modality,
                });
            } else if count > 1 {
                v.push(Violation::OverfullPair {
                    pair_id: pair_id.to_string(),
                    modality,
                });
            }
        }
    }
}

fn check_tags(task: &Task, v: &mut Vec<Violation>) {
    for (dimension, tags, vocabulary) in task.tags.dimensions() {
        for tag in tags {
            let bare = tag.trim_start_matches('#');
            if !vocabulary.contains(&bare) {
                v.push(Violation::UnknownTag {
                    dimension,
                    tag: tag.clone(),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{Checkpoint, ContextTags, Sections};
    use ChallengePrimitive::*;

    fn checklist(pairs: usize) -> Vec<Checkpoint> {
        (1..=pairs)
            .flat_map(|i| {
                [
                    Checkpoint {
                        id: format!("P{i}"),
                        modality: Modality::Prompt,
                        text: format!("prompt item {i}"),
                        pair_id: i.to_string(),
                    },
                    Checkpoint {
                        id: format!("I{i}"),
                        modality: Modality::Image,
                        text: format!("image item {i}"),
                        pair_id: i.to_string(),
                    },
                ]
            })
            .collect()
    }

    fn task(category: TaskCategory, semantic: &[(ChallengePrimitive, u32)], constraint: &[(ChallengePrimitive, u32)], pairs: usize) -> Task {
        Task {
            id: "t".into(),
            category,
            title: "T".into(),
            description: (category != TaskCategory::Imitation).then(|| "brief".to_string()),
            structured_constraints: Sections::default(),
            target_image: (category == TaskCategory::Imitation).then(|| crate::image::ImageRef {
                path: "x.png".into(),
                sha256: "00".into(),
            }),
            semantic_counts: semantic.iter().copied().collect(),
            constraint_counts: constraint.iter().copied().collect(),
            tags: ContextTags::default(),
            checklist: checklist(pairs),
        }
    }

    #[test]
    fn oe_below_six_cues() {
        let t = task(TaskCategory::OpenEnded, &[(S1, 2), (S2, 1), (S3, 1), (S4, 1)], &[], 6);
        let report = validate_task(&t);
        assert_eq!(report.violations, vec![Violation::SemanticCountBelow { min: 6, found: 5 }]);
        assert!(report.violations[0].to_string().contains("semantic cue count below 6"));
    }

    #[test]
    fn oe_bounds_are_inclusive() {
        for total in [6, 10] {
            let t = task(TaskCategory::OpenEnded, &[(S1, total)], &[], 4);
            assert!(validate_task(&t).is_ok(), "total {total}");
        }
        let t = task(TaskCategory::OpenEnded, &[(S1, 11)], &[], 4);
        assert!(!validate_task(&t).is_ok());
    }

    #[test]
    fn oe_rejects_constraints() {
        let t = task(TaskCategory::OpenEnded, &[(S1, 7)], &[(C3, 1)], 4);
        assert_eq!(
            validate_task(&t).violations,
            vec![Violation::ConstraintInOpenEnded { primitive: C3, count: 1 }]
        );
    }

    #[test]
    fn im_excludes_audience_intent() {
        let t = task(TaskCategory::Imitation, &[(S1, 1), (S2, 1)], &[(C1, 4)], 12);
        let report = validate_task(&t);
        assert_eq!(report.violations, vec![Violation::ExcludedFromImitation { primitive: S2 }]);
        assert!(report.violations[0].to_string().contains("IM excludes audience intent"));
    }

    #[test]
    fn im_pair_bounds() {
        assert!(validate_task(&task(TaskCategory::Imitation, &[(S1, 1)], &[(C1, 1)], 10)).is_ok());
        assert!(validate_task(&task(TaskCategory::Imitation, &[(S1, 1)], &[(C1, 1)], 20)).is_ok());
        assert!(!validate_task(&task(TaskCategory::Imitation, &[(S1, 1)], &[(C1, 1)], 9)).is_ok());
        assert!(!validate_task(&task(TaskCategory::Imitation, &[(S1, 1)], &[(C1, 1)], 21)).is_ok());
    }

    #[test]
    fn co_four_constraint_kinds_three_semantic_is_ok() {
        let t = task(
            TaskCategory::Constrained,
            &[(S1, 1), (S2, 1), (S3, 1)],
            &[(C1, 3), (C2, 2), (C3, 1), (C4, 4)],
            8,
        );
        assert!(validate_task(&t).is_ok(), "{:?}", validate_task(&t));
    }

    #[test]
    fn co_counts_must_be_binary_and_kinds_bounded() {
        let t = task(TaskCategory::Constrained, &[(S1, 2), (S2, 1)], &[(C1, 1), (C2, 1)], 4);
        let v = validate_task(&t).violations;
        assert!(v.contains(&Violation::SemanticNotBinary { primitive: S1, count: 2 }));
        assert!(v.contains(&Violation::SemanticKindsOutOfRange { min: 3, max: 4, found: 2 }));
        assert!(v.contains(&Violation::ConstraintKindsOutOfRange { min: 3, max: 5, found: 2 }));
    }

    #[test]
    fn unpaired_checkpoint_and_wrong_class_are_reported_together() {
        let mut t = task(TaskCategory::OpenEnded, &[(S1, 6), (C1, 1)], &[], 3);
        t.checklist.pop();
        let v = validate_task(&t).violations;
        assert!(v.contains(&Violation::UnpairedCheckpoint {
            pair_id: "3".into(),
            missing: Modality::Image
        }));
        assert!(v.iter().any(|x| matches!(x, Violation::WrongPrimitiveClass { primitive: C1, .. })));
    }

    #[test]
    fn unknown_tags_flagged() {
        let mut t = task(TaskCategory::OpenEnded, &[(S1, 6)], &[], 2);
        t.tags.visual_style = vec!["#Photorealistic".into(), "Watercolour".into()];
        assert_eq!(
            validate_task(&t).violations,
            vec![Violation::UnknownTag {
                dimension: "visual_style",
                tag: "Watercolour".into()
            }]
        );
    }
}
