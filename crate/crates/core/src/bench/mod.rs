//! The prompting-proficiency protocol: elicit a prompt per prompter and task,
//! generate N images per backend, judge every candidate, keep the top-1.

mod human;
mod report;
mod stability;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{generate_images, ChatClient, ChatRequest, ClientError, T2IBackend};
use crate::image::{ImageData, Modality};
use crate::judge::{
    EvaluationRecord, Judge, JudgeError, Payload, SafetyVerdict, Skill, SkillOutcome, SkillPlan, Slot, Slots,
    TaskContext, TemplateError, TemplateSet,
};
use crate::task::TaskCategory;

pub use human::{HumanLog, HumanSubmission};
pub use report::{aggregate_report, format_table, AggregateReport, Cell, CellKey, MetricKind, ALL_BACKENDS, ALL_CATEGORIES};
pub use stability::{stability_sweep, SweepAxis, SweepGrid, SweepPoint, SweepTable};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("no candidate survived safety and generation")]
    NoCandidate,
    #[error("unknown {kind} {id:?}")]
    Unknown { kind: &'static str, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrompterKind {
    Mllm,
    HumanLog,
    /// The task description itself is the prompt.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Novice,
    Skilled,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Novice => "novice",
            Strategy::Skilled => "skilled",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "novice" => Ok(Strategy::Novice),
            "skilled" => Ok(Strategy::Skilled),
            other => Err(BenchError::Unknown {
                kind: "strategy",
                id: other.to_string(),
            }),
        }
    }
}

/// A prompting policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrompterSpec {
    pub prompter_id: String,
    pub kind: PrompterKind,
    /// Chat model id (mllm only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    /// Instruction template for mllm prompters; group label for human logs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
}

impl PrompterSpec {
    pub fn mllm(model_id: &str, strategy: Strategy) -> Self {
        Self {
            prompter_id: format!("{model_id}-{}", strategy.as_str()),
            kind: PrompterKind::Mllm,
            model_id: Some(model_id.to_string()),
            strategy: Some(strategy),
        }
    }

    pub fn human(group: Strategy) -> Self {
        Self {
            prompter_id: format!("human-{}", group.as_str()),
            kind: PrompterKind::HumanLog,
            model_id: None,
            strategy: Some(group),
        }
    }

    pub fn direct() -> Self {
        Self {
            prompter_id: "direct".into(),
            kind: PrompterKind::Direct,
            model_id: None,
            strategy: None,
        }
    }
}

/// Top-1 rule: image objective rate, then mean image subjective score, then
/// lowest candidate index.
pub const SELECTION_RULE: &str = "image-objective>image-subjective>index";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_prompts: usize,
    pub n_images: usize,
    pub backends: Vec<String>,
    pub selection: String,
    pub seed: u64,
    /// Concurrent task runs.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_prompts: 1,
            n_images: 4,
            backends: Vec::new(),
            selection: SELECTION_RULE.into(),
            seed: 0,
            workers: 4,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<(), BenchError> {
        if self.n_prompts == 0 || self.n_images == 0 {
            return Err(BenchError::Precondition("n_prompts and n_images must be at least 1".into()));
        }
        if self.selection != SELECTION_RULE {
            return Err(BenchError::Unknown {
                kind: "selection rule",
                id: self.selection.clone(),
            });
        }
        Ok(())
    }
}

/// The prompter's instruction for one task.
pub fn render_prompter_instruction(
    templates: &TemplateSet,
    spec: &PrompterSpec,
    ctx: &TaskContext,
) -> Result<ChatRequest, BenchError> {
    if spec.kind != PrompterKind::Mllm {
        return Err(BenchError::Contract(format!(
            "prompter {} is not a model prompter; human prompts come from session logs",
            spec.prompter_id
        )));
    }
    let strategy = spec
        .strategy
        .ok_or_else(|| BenchError::Contract(format!("prompter {} has no strategy", spec.prompter_id)))?;
    let imitation = ctx.task.category == TaskCategory::Imitation;
    let name = match (strategy, ctx.task.category) {
        (Strategy::Novice, TaskCategory::Imitation) => "prompter_novice_image",
        (Strategy::Novice, _) => "prompter_novice_text",
        (Strategy::Skilled, TaskCategory::OpenEnded) => "prompter_skilled_oe",
        (Strategy::Skilled, TaskCategory::Constrained) => "prompter_skilled_co",
        (Strategy::Skilled, TaskCategory::Imitation) => "prompter_skilled_im",
    };
    let mut query = Slots::new();
    if imitation {
        let target = ctx
            .target
            .clone()
            .ok_or_else(|| BenchError::Contract(format!("task {} has no loaded target image", ctx.task.id)))?;
        query.insert("IMAGE".into(), Slot::image(target));
    } else {
        query.insert("TASK".into(), Slot::Text(task_text(ctx)));
    }
    Ok(templates.get(name)?.render(&Slots::new(), &[], &query)?)
}

/// Description plus structured sections, without the title.
fn task_text(ctx: &TaskContext) -> String {
    let mut out = ctx.task.description.clone().unwrap_or_default().trim().to_string();
    for (name, text) in ctx.task.structured_constraints.iter() {
        out.push_str(&format!("\n\n{name}:\n{}", text.trim()));
    }
    out
}

/// One judged image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub prompt_index: usize,
    pub image_index: usize,
    pub record: EvaluationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRunRecord {
    pub task_id: String,
    pub category: TaskCategory,
    pub prompter_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<String>,
    pub backend_id: String,
    pub prompts: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub selected_index: Option<usize>,
    pub selection_rule: String,
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TaskRunRecord {
    pub fn selected(&self) -> Option<&EvaluationRecord> {
        self.selected_index.and_then(|i| self.candidates.get(i)).map(|c| &c.record)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("every candidate is excluded")]
pub struct SelectionError;

fn selection_key(record: &EvaluationRecord) -> (f64, f64) {
    (
        record.rate(Modality::Image).unwrap_or(f64::NEG_INFINITY),
        record.subjective_mean(Modality::Image).unwrap_or(f64::NEG_INFINITY),
    )
}

/// Index of the best non-excluded candidate.
pub fn select_top1(candidates: &[EvaluationRecord]) -> Result<usize, SelectionError> {
    let mut best: Option<(usize, (f64, f64))> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.excluded {
            continue;
        }
        let key = selection_key(c);
        let better = match &best {
            None => true,
            Some((_, b)) => match key.0.total_cmp(&b.0) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => key.1.total_cmp(&b.1) == Ordering::Greater,
            },
        };
        if better {
            best = Some((i, key));
        }
    }
    best.map(|(i, _)| i).ok_or(SelectionError)
}

/// Clients and data shared by every task run.
pub struct BenchContext {
    pub judge: Arc<Judge>,
    pub prompters: BTreeMap<String, Arc<dyn ChatClient>>,
    pub backends: BTreeMap<String, Arc<dyn T2IBackend>>,
    pub templates: Arc<TemplateSet>,
}

impl BenchContext {
    fn backend(&self, id: &str) -> Result<&dyn T2IBackend, BenchError> {
        self.backends.get(id).map(|b| b.as_ref()).ok_or_else(|| BenchError::Unknown {
            kind: "backend",
            id: id.to_string(),
        })
    }

    /// `n` prompts from the prompter, one single-turn request each.
    pub async fn elicit_prompts(&self, spec: &PrompterSpec, ctx: &TaskContext, n: usize) -> Result<Vec<String>, BenchError> {
        match spec.kind {
            PrompterKind::Direct => {
                if ctx.task.description.is_none() {
                    return Err(BenchError::Contract(format!("task {} has no description to pass through", ctx.task.id)));
                }
                Ok(vec![task_text(ctx); n])
            }
            PrompterKind::HumanLog => Err(BenchError::Contract("human prompts are read from session exports".into())),
            PrompterKind::Mllm => {
                let model = spec.model_id.as_deref().unwrap_or_default();
                let chat = self.prompters.get(model).ok_or_else(|| BenchError::Unknown {
                    kind: "prompter model",
                    id: model.to_string(),
                })?;
                let request = render_prompter_instruction(&self.templates, spec, ctx)?;
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let reply = chat.complete(&request).await?;
                    let prompt = reply.trim().to_string();
                    if prompt.is_empty() {
                        return Err(BenchError::Client(ClientError::Protocol("prompter returned an empty prompt".into())));
                    }
                    out.push(prompt);
                }
                Ok(out)
            }
        }
    }

    /// Elicits prompts and runs the protocol for one (prompter, task, backend).
    pub async fn run_task(&self, spec: &PrompterSpec, ctx: &TaskContext, backend_id: &str, run: &RunConfig) -> TaskRunRecord {
        let prompts = match run.check() {
            Ok(()) => self.elicit_prompts(spec, ctx, run.n_prompts).await,
            Err(e) => Err(e),
        };
        self.run_with_prompts(spec, None, ctx, backend_id, run, prompts).await
    }

    /// Runs the protocol on prompts that were already written.
    pub async fn run_with_prompts(
        &self,
        spec: &PrompterSpec,
        participant: Option<String>,
        ctx: &TaskContext,
        backend_id: &str,
        run: &RunConfig,
        prompts: Result<Vec<String>, BenchError>,
    ) -> TaskRunRecord {
        let mut record = TaskRunRecord {
            task_id: ctx.task.id.clone(),
            category: ctx.task.category,
            prompter_id: spec.prompter_id.clone(),
            participant,
            backend_id: backend_id.to_string(),
            prompts: Vec::new(),
            candidates: Vec::new(),
            selected_index: None,
            selection_rule: run.selection.clone(),
            excluded: false,
            error: None,
        };
        let prompts = match prompts {
            Ok(p) => p,
            Err(e) => {
                record.error = Some(format!("prompt elicitation failed: {e}"));
                return record;
            }
        };
        record.prompts = prompts.clone();
        match self.judge_candidates(spec, ctx, backend_id, &prompts, run.n_images).await {
            Ok(candidates) => {
                let records: Vec<EvaluationRecord> = candidates.iter().map(|c| c.record.clone()).collect();
                record.selected_index = select_top1(&records).ok();
                record.excluded = record.selected_index.is_none();
                record.candidates = candidates;
            }
            Err(BenchError::NoCandidate) => record.excluded = true,
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    }

    /// Generates and judges `n_images` images for every prompt. Prompt-side
    /// skills run once per prompt and are shared by its candidates.
    pub async fn judge_candidates(
        &self,
        spec: &PrompterSpec,
        ctx: &TaskContext,
        backend_id: &str,
        prompts: &[String],
        n_images: usize,
    ) -> Result<Vec<Candidate>, BenchError> {
        let backend = self.backend(backend_id)?;
        let judge = &self.judge;
        let plan = SkillPlan::for_category(ctx.task.category);
        let mut out = Vec::new();
        let mut prompt_side: BTreeMap<&str, (SafetyVerdict, Vec<SkillOutcome>)> = BTreeMap::new();
        for (pi, prompt) in prompts.iter().enumerate() {
            let images = match generate_images(backend, prompt, n_images).await {
                Ok(images) => images,
                Err(ClientError::Refusal(message)) => {
                    tracing::info!(task = %ctx.task.id, %message, "backend refused prompt");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if !prompt_side.contains_key(prompt.as_str()) {
                let verdict = judge.safety_check(ctx, Payload::Prompt(prompt)).await?;
                let outcomes = if verdict.flagged {
                    Vec::new()
                } else {
                    judge.run_side(&plan, ctx, Payload::Prompt(prompt)).await
                };
                prompt_side.insert(prompt, (verdict, outcomes));
            }
            let (prompt_verdict, prompt_outcomes) = prompt_side[prompt.as_str()].clone();
            let judged = futures::future::join_all(images.iter().map(|image| {
                self.judge_image(&plan, ctx, spec, image, prompt_verdict.clone(), prompt_outcomes.clone())
            }))
            .await;
            for (ii, record) in judged.into_iter().enumerate() {
                out.push(Candidate {
                    prompt_index: pi,
                    image_index: ii,
                    record: record?,
                });
            }
        }
        if out.is_empty() {
            return Err(BenchError::NoCandidate);
        }
        Ok(out)
    }

    async fn judge_image(
        &self,
        plan: &SkillPlan,
        ctx: &TaskContext,
        spec: &PrompterSpec,
        image: &ImageData,
        prompt_verdict: SafetyVerdict,
        mut outcomes: Vec<SkillOutcome>,
    ) -> Result<EvaluationRecord, BenchError> {
        let judge = &self.judge;
        let started = chrono::Utc::now();
        let header = judge.header(ctx, &spec.prompter_id, Some(image));
        let image_verdict = judge.safety_check(ctx, Payload::Image(image)).await?;
        let flagged = prompt_verdict.flagged || image_verdict.flagged;
        let safety = vec![prompt_verdict, image_verdict];
        if flagged {
            outcomes.clear();
        } else {
            outcomes.extend(judge.run_side(plan, ctx, Payload::Image(image)).await);
        }
        debug_assert!(outcomes.iter().all(|o| !matches!(o.skill, Skill::Safety(_))));
        Ok(judge.finish(plan, header, safety, outcomes, started)?)
    }

    /// Every (task, backend) pair on a bounded worker pool, in input order.
    pub async fn run_bench(&self, spec: &PrompterSpec, tasks: &[TaskContext], run: &RunConfig) -> Vec<TaskRunRecord> {
        let jobs: Vec<(&TaskContext, &String)> = tasks
            .iter()
            .flat_map(|t| run.backends.iter().map(move |b| (t, b)))
            .collect();
        stream::iter(jobs)
            .map(|(t, b)| self.run_task(spec, t, b, run))
            .buffered(run.workers.max(1))
            .collect()
            .await
    }

    /// One record per logged human submission for the given group.
    pub async fn run_human(
        &self,
        spec: &PrompterSpec,
        log: &HumanLog,
        tasks: &[TaskContext],
        run: &RunConfig,
    ) -> Vec<TaskRunRecord> {
        let group = spec.strategy;
        let mut jobs = Vec::new();
        for row in log.rows.iter().filter(|r| Some(r.group) == group) {
            let Some(ctx) = tasks.iter().find(|t| t.task.id == row.task_id) else {
                continue;
            };
            for b in &run.backends {
                jobs.push((row, ctx, b));
            }
        }
        stream::iter(jobs)
            .map(|(row, ctx, b)| {
                self.run_with_prompts(spec, Some(row.anon_id.clone()), ctx, b, run, Ok(vec![row.prompt.clone()]))
            })
            .buffered(run.workers.max(1))
            .collect()
            .await
    }
}
