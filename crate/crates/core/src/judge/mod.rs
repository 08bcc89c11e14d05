//! The agentic judge: safety gates, task-conditioned skill routing,
//! memory-calibrated subjective skills, checklist-based objective skills and
//! aggregation into an [`EvaluationRecord`].

mod engine;
pub mod parse;
pub mod template;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::Hyperparams;
use crate::image::Modality;
use crate::memory::MemorySkill;
use crate::task::TaskCategory;

pub use engine::{
    render_skill_prompt, ExemplarView, Judge, JudgeConfig, JudgeError, Payload, Retrieval, SkillOutcome, SkillResult,
    TaskContext,
};
pub use parse::{parse_objective_response, parse_safety_response, parse_subjective_response, ParseError};
pub use template::{Slot, Slots, Template, TemplateError, TemplateSet};

/// One unit of judge work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Skill {
    Safety(Modality),
    Subjective(MemorySkill),
    Objective(Modality),
}

impl Skill {
    pub fn modality(self) -> Modality {
        match self {
            Skill::Safety(m) | Skill::Objective(m) => m,
            Skill::Subjective(s) => s.modality(),
        }
    }

    pub fn id(self) -> String {
        match self {
            Skill::Safety(m) => format!("{m}-safety"),
            Skill::Subjective(s) => format!("{}-subjective-{}", s.modality(), s.category().code()),
            Skill::Objective(m) => format!("{m}-objective"),
        }
    }

    pub fn template_name(self) -> String {
        match self {
            Skill::Safety(m) => format!("{m}_safety"),
            Skill::Subjective(s) => format!("{}_subjective", s.modality()),
            Skill::Objective(m) => format!("{m}_objective"),
        }
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl Serialize for Skill {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.id())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("cannot route unknown task category {0:?}")]
pub struct RoutingError(pub String);

/// Skills that apply to one task category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkillPlan {
    pub category: TaskCategory,
    pub safety: [Modality; 2],
    pub subjective: Vec<MemorySkill>,
    pub objective: [Modality; 2],
}

impl SkillPlan {
    pub fn for_category(category: TaskCategory) -> Self {
        let subjective = Modality::ALL
            .into_iter()
            .filter_map(|m| MemorySkill::for_task(m, category))
            .collect();
        Self {
            category,
            safety: Modality::ALL,
            subjective,
            objective: Modality::ALL,
        }
    }

    /// Scoring skills in canonical order: subjective by modality, then objective.
    pub fn scoring_skills(&self) -> Vec<Skill> {
        self.subjective
            .iter()
            .map(|s| Skill::Subjective(*s))
            .chain(self.objective.iter().map(|m| Skill::Objective(*m)))
            .collect()
    }

    pub fn scoring_skills_for(&self, modality: Modality) -> Vec<Skill> {
        self.scoring_skills().into_iter().filter(|s| s.modality() == modality).collect()
    }

    pub fn all_skills(&self) -> Vec<Skill> {
        let mut out: Vec<Skill> = self.safety.iter().map(|m| Skill::Safety(*m)).collect();
        out.extend(self.scoring_skills());
        out
    }
}

pub fn route_skills(category: &str) -> Result<SkillPlan, RoutingError> {
    let category = category.parse::<TaskCategory>().map_err(|_| RoutingError(category.to_string()))?;
    Ok(SkillPlan::for_category(category))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectiveScoreSet {
    pub modality: Modality,
    pub scores: BTreeMap<String, u8>,
    #[serde(default)]
    pub rationales: BTreeMap<String, String>,
}

impl SubjectiveScoreSet {
    pub fn mean(&self) -> f64 {
        self.scores.values().map(|s| f64::from(*s)).sum::<f64>() / self.scores.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveResult {
    pub modality: Modality,
    /// Checkpoint id → satisfied.
    pub verdicts: BTreeMap<String, bool>,
    pub satisfaction_rate: f64,
}

impl ObjectiveResult {
    pub fn new(modality: Modality, verdicts: BTreeMap<String, bool>) -> Self {
        let passed = verdicts.values().filter(|v| **v).count();
        let satisfaction_rate = if verdicts.is_empty() {
            f64::NAN
        } else {
            passed as f64 / verdicts.len() as f64
        };
        Self {
            modality,
            verdicts,
            satisfaction_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub modality: Modality,
    pub flagged: bool,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillFailure {
    pub skill: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_at: chrono::DateTime<chrono::Utc>,
    pub finished_at: chrono::DateTime<chrono::Utc>,
}

/// Identification and provenance fields of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub task_id: String,
    pub prompter_id: String,
    pub judge_model: String,
    pub judge_hyperparams: Hyperparams,
    pub retrieval: Retrieval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
}

/// The judge's output for one prompt/image submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    #[serde(flatten)]
    pub header: RecordHeader,
    pub category: TaskCategory,
    pub excluded: bool,
    pub safety: Vec<SafetyVerdict>,
    pub subjective: Vec<SubjectiveScoreSet>,
    pub objective: Vec<ObjectiveResult>,
    /// Skill id → exemplar ids placed in its request.
    pub retrieved_exemplar_ids: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<SkillFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Timestamps>,
}

impl EvaluationRecord {
    pub fn subjective_for(&self, modality: Modality) -> Option<&SubjectiveScoreSet> {
        self.subjective.iter().find(|s| s.modality == modality)
    }

    pub fn objective_for(&self, modality: Modality) -> Option<&ObjectiveResult> {
        self.objective.iter().find(|o| o.modality == modality)
    }

    pub fn rate(&self, modality: Modality) -> Option<f64> {
        self.objective_for(modality).map(|o| o.satisfaction_rate)
    }

    pub fn subjective_mean(&self, modality: Modality) -> Option<f64> {
        self.subjective_for(modality).map(SubjectiveScoreSet::mean)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AggregationError {
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("objective result for {0} has an empty checklist")]
    EmptyChecklist(Modality),
    #[error("invalid subjective scores: {0}")]
    InvalidScores(String),
}

/// Combines the outputs of one routed plan into a record. A flagged safety
/// verdict excludes the submission and drops every score.
pub fn aggregate_evaluation(
    plan: &SkillPlan,
    header: RecordHeader,
    safety: Vec<SafetyVerdict>,
    outcomes: Vec<SkillOutcome>,
) -> Result<EvaluationRecord, AggregationError> {
    let mismatch = |m: String| AggregationError::PlanMismatch(m);
    let mut safety_sorted = Vec::with_capacity(2);
    for m in plan.safety {
        let mut found = safety.iter().filter(|v| v.modality == m);
        let v = found.next().ok_or_else(|| mismatch(format!("no {m} safety verdict")))?;
        if found.next().is_some() {
            return Err(mismatch(format!("more than one {m} safety verdict")));
        }
        safety_sorted.push(v.clone());
    }
    if safety.len() != plan.safety.len() {
        return Err(mismatch("unexpected safety verdicts".into()));
    }
    let mut record = EvaluationRecord {
        header,
        category: plan.category,
        excluded: safety_sorted.iter().any(|v| v.flagged),
        safety: safety_sorted,
        subjective: Vec::new(),
        objective: Vec::new(),
        retrieved_exemplar_ids: BTreeMap::new(),
        errors: Vec::new(),
        timestamps: None,
    };
    if record.excluded {
        return Ok(record);
    }
    let expected = plan.scoring_skills();
    let mut by_skill: BTreeMap<Skill, SkillOutcome> = BTreeMap::new();
    for o in outcomes {
        if !expected.contains(&o.skill) {
            return Err(mismatch(format!("skill {} is not in the {} plan", o.skill, plan.category.code())));
        }
        let skill = o.skill;
        if by_skill.insert(skill, o).is_some() {
            return Err(mismatch(format!("skill {skill} reported twice")));
        }
    }
    for skill in expected {
        let o = by_skill
            .remove(&skill)
            .ok_or_else(|| mismatch(format!("no outcome for skill {skill}")))?;
        if matches!(skill, Skill::Subjective(_)) {
            record.retrieved_exemplar_ids.insert(skill.id(), o.retrieved.clone());
        }
        match (skill, o.result) {
            (_, Err(message)) => record.errors.push(SkillFailure {
                skill: skill.id(),
                message,
            }),
            (Skill::Subjective(s), Ok(SkillResult::Subjective(set))) => {
                check_scores(s.modality(), &set)?;
                record.subjective.push(set);
            }
            (Skill::Objective(m), Ok(SkillResult::Objective(r))) => {
                if r.modality != m {
                    return Err(mismatch(format!("{} result reported by {skill}", r.modality)));
                }
                if r.verdicts.is_empty() {
                    return Err(AggregationError::EmptyChecklist(m));
                }
                record.objective.push(ObjectiveResult::new(m, r.verdicts));
            }
            (skill, Ok(_)) => return Err(mismatch(format!("wrong result kind for {skill}"))),
        }
    }
    Ok(record)
}

fn check_scores(modality: Modality, set: &SubjectiveScoreSet) -> Result<(), AggregationError> {
    let dims = modality.dimensions();
    let ok = set.modality == modality
        && set.scores.len() == dims.len()
        && dims.iter().all(|d| set.scores.get(*d).is_some_and(|s| (1..=5).contains(s)));
    if ok {
        Ok(())
    } else {
        Err(AggregationError::InvalidScores(format!("{modality} scores {:?}", set.scores)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> RecordHeader {
        RecordHeader {
            task_id: "t".into(),
            prompter_id: "p".into(),
            judge_model: "j".into(),
            judge_hyperparams: Hyperparams::default(),
            retrieval: Retrieval::default(),
            image_sha256: None,
        }
    }

    fn safe() -> Vec<SafetyVerdict> {
        Modality::ALL
            .into_iter()
            .map(|modality| SafetyVerdict {
                modality,
                flagged: false,
                categories: vec![],
                detail: String::new(),
            })
            .collect()
    }

    fn scores(modality: Modality, values: [u8; 4]) -> SubjectiveScoreSet {
        SubjectiveScoreSet {
            modality,
            scores: modality.dimensions().iter().map(|d| d.to_string()).zip(values).collect(),
            rationales: BTreeMap::new(),
        }
    }

    fn objective(modality: Modality, passed: usize, total: usize) -> ObjectiveResult {
        ObjectiveResult::new(modality, (0..total).map(|i| (format!("c{i:02}"), i < passed)).collect())
    }

    fn outcome(skill: Skill, result: SkillResult) -> SkillOutcome {
        SkillOutcome {
            skill,
            retrieved: vec![],
            result: Ok(result),
        }
    }

    #[test]
    fn plans_per_category() {
        let oe = route_skills("OE").unwrap();
        assert_eq!(oe.subjective, [MemorySkill::PromptOE, MemorySkill::ImageOE]);
        assert_eq!(oe.scoring_skills().len(), 4);
        let im = route_skills("IM").unwrap();
        assert_eq!(im.subjective, [MemorySkill::PromptIM]);
        assert_eq!(im.objective, Modality::ALL);
        assert_eq!(route_skills("XX"), Err(RoutingError("XX".into())));
    }

    #[test]
    fn values_pass_through() {
        let plan = SkillPlan::for_category(TaskCategory::Imitation);
        let record = aggregate_evaluation(
            &plan,
            header(),
            safe(),
            vec![
                outcome(Skill::Objective(Modality::Image), SkillResult::Objective(objective(Modality::Image, 1, 4))),
                outcome(
                    Skill::Subjective(MemorySkill::PromptIM),
                    SkillResult::Subjective(scores(Modality::Prompt, [4, 3, 5, 4])),
                ),
                outcome(Skill::Objective(Modality::Prompt), SkillResult::Objective(objective(Modality::Prompt, 7, 10))),
            ],
        )
        .unwrap();
        assert!(!record.excluded);
        let s = record.subjective_for(Modality::Prompt).unwrap();
        assert_eq!(s.scores["Instructional Clarity"], 4);
        assert_eq!(s.scores["Creative Elaboration"], 3);
        assert_eq!(record.rate(Modality::Prompt), Some(0.7));
        assert_eq!(record.rate(Modality::Image), Some(0.25));
        assert_eq!(record.objective[0].modality, Modality::Prompt);
    }

    #[test]
    fn flagged_submission_has_no_scores() {
        let plan = SkillPlan::for_category(TaskCategory::OpenEnded);
        let mut verdicts = safe();
        verdicts[1].flagged = true;
        verdicts[1].categories = vec!["violence".into()];
        let record = aggregate_evaluation(&plan, header(), verdicts, vec![]).unwrap();
        assert!(record.excluded);
        assert!(record.subjective.is_empty() && record.objective.is_empty());
    }

    #[test]
    fn empty_checklist_and_mismatches() {
        let plan = SkillPlan::for_category(TaskCategory::Imitation);
        let full = |image: ObjectiveResult| {
            vec![
                outcome(
                    Skill::Subjective(MemorySkill::PromptIM),
                    SkillResult::Subjective(scores(Modality::Prompt, [1, 2, 3, 4])),
                ),
                outcome(Skill::Objective(Modality::Prompt), SkillResult::Objective(objective(Modality::Prompt, 1, 2))),
                outcome(Skill::Objective(Modality::Image), SkillResult::Objective(image)),
            ]
        };
        assert_eq!(
            aggregate_evaluation(&plan, header(), safe(), full(objective(Modality::Image, 0, 0))),
            Err(AggregationError::EmptyChecklist(Modality::Image))
        );
        let mut extra = full(objective(Modality::Image, 1, 1));
        extra.push(outcome(
            Skill::Subjective(MemorySkill::ImageOE),
            SkillResult::Subjective(scores(Modality::Image, [1, 1, 1, 1])),
        ));
        assert!(matches!(
            aggregate_evaluation(&plan, header(), safe(), extra),
            Err(AggregationError::PlanMismatch(_))
        ));
        let mut short = full(objective(Modality::Image, 1, 1));
        short.pop();
        assert!(matches!(
            aggregate_evaluation(&plan, header(), safe(), short),
            Err(AggregationError::PlanMismatch(_))
        ));
    }

    #[test]
    fn skill_failures_are_annotated() {
        let plan = SkillPlan::for_category(TaskCategory::Imitation);
        let outcomes = vec![
            SkillOutcome {
                skill: Skill::Subjective(MemorySkill::PromptIM),
                retrieved: vec!["x".into()],
                result: Err("judge unreachable".into()),
            },
            outcome(Skill::Objective(Modality::Prompt), SkillResult::Objective(objective(Modality::Prompt, 1, 2))),
            outcome(Skill::Objective(Modality::Image), SkillResult::Objective(objective(Modality::Image, 1, 2))),
        ];
        let record = aggregate_evaluation(&plan, header(), safe(), outcomes).unwrap();
        assert_eq!(record.errors.len(), 1);
        assert_eq!(record.errors[0].skill, "prompt-subjective-IM");
        assert_eq!(record.objective.len(), 2);
    }
}
