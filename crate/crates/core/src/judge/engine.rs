use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use futures::future::join_all;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::parse::{parse_objective_response, parse_safety_response, parse_subjective_response, ParseError};
use super::template::{Slot, Slots, TemplateError, TemplateSet};
use super::{
    aggregate_evaluation, AggregationError, EvaluationRecord, ObjectiveResult, RecordHeader, SafetyVerdict, Skill,
    SkillPlan, SubjectiveScoreSet, Timestamps,
};
use crate::clients::{embed, ChatClient, ChatRequest, ClientError, ContentPart, EmbedInput, Embedder, Message, Role};
use crate::image::{ImageData, ImageError, Modality};
use crate::memory::{Exemplar, ExemplarMemory, MemoryError, MemorySkill, Payload as ExemplarPayload, DEFAULT_K};
use crate::task::Task;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{skill}: unusable reply after {attempts} attempts: {error}")]
    Parse {
        skill: String,
        attempts: u32,
        error: ParseError,
    },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{modality} safety check failed, evaluation aborted (retryable): {message}")]
    Safety { modality: Modality, message: String },
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

impl JudgeError {
    pub fn is_retryable(&self) -> bool {
        match self {
            JudgeError::Safety { .. } => true,
            JudgeError::Client(e) => e.is_retryable(),
            _ => false,
        }
    }
}

/// How exemplars are chosen for subjective skills.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Retrieval {
    ZeroShot,
    /// The same exemplars for every request of a modality, looked up by id
    /// across all memories of that modality.
    FixedFewShot { prompt: Vec<String>, image: Vec<String> },
    /// `k` exemplars drawn uniformly from the skill's memory, seeded per
    /// (seed, skill, task).
    Random { k: usize, seed: u64 },
    Similarity { k: usize },
}

impl Default for Retrieval {
    fn default() -> Self {
        Retrieval::Similarity { k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeConfig {
    #[serde(default)]
    pub retrieval: Retrieval,
    /// Stamp wall-clock start and finish times on records.
    #[serde(default)]
    pub timestamps: bool,
}

/// A task plus its loaded target image (imitation tasks only).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskContext {
    pub task: Task,
    pub target: Option<ImageData>,
}

impl TaskContext {
    pub fn new(task: Task, target: Option<ImageData>) -> Self {
        Self { task, target }
    }

    /// Loads and verifies the target image relative to `root`.
    pub fn load(task: Task, root: &Path) -> Result<Self, ImageError> {
        let target = match &task.target_image {
            Some(r) => Some(r.load(root)?),
            None => None,
        };
        Ok(Self { task, target })
    }

    fn task_slot(&self) -> Result<Slot, JudgeError> {
        let brief = self.task.brief();
        match (self.task.category, &self.target) {
            (crate::task::TaskCategory::Imitation, Some(img)) => Ok(Slot::Parts(vec![
                ContentPart::Text(format!("{brief}\n\nTarget image:\n")),
                ContentPart::Image(img.clone()),
            ])),
            (crate::task::TaskCategory::Imitation, None) => {
                Err(JudgeError::Contract(format!("task {} has no loaded target image", self.task.id)))
            }
            _ => Ok(Slot::Text(brief)),
        }
    }
}

/// What is being judged.
#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    Prompt(&'a str),
    Image(&'a ImageData),
}

impl Payload<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Prompt(_) => Modality::Prompt,
            Payload::Image(_) => Modality::Image,
        }
    }

    fn slot(&self) -> Slot {
        match self {
            Payload::Prompt(t) => Slot::Text(t.to_string()),
            Payload::Image(img) => Slot::image((*img).clone()),
        }
    }
}

/// An exemplar ready to be rendered, with its image loaded if it has one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarView {
    pub exemplar: Exemplar,
    pub image: Option<ImageData>,
}

impl ExemplarView {
    pub fn load(exemplar: &Exemplar, image_root: &Path) -> Result<Self, ImageError> {
        let image = match &exemplar.payload {
            ExemplarPayload::Image { image } => Some(image.load(image_root)?),
            ExemplarPayload::Text { .. } => None,
        };
        Ok(Self {
            exemplar: exemplar.clone(),
            image,
        })
    }

    fn slots(&self) -> Result<Slots, JudgeError> {
        let mut s = Slots::new();
        s.insert("TASK".into(), Slot::Text(self.exemplar.task.clone()));
        s.insert("JSON".into(), Slot::Text(self.exemplar.gold_json()));
        match (&self.exemplar.payload, &self.image) {
            (ExemplarPayload::Text { text }, _) => {
                s.insert("PROMPT".into(), Slot::Text(text.clone()));
            }
            (ExemplarPayload::Image { .. }, Some(img)) => {
                s.insert("IMAGE_INPUT".into(), Slot::image(img.clone()));
            }
            (ExemplarPayload::Image { .. }, None) => {
                return Err(JudgeError::Contract(format!("exemplar {} image not loaded", self.exemplar.id)))
            }
        }
        Ok(s)
    }
}

/// Renders the judge request for one skill.
pub fn render_skill_prompt(
    templates: &TemplateSet,
    skill: Skill,
    ctx: &TaskContext,
    payload: Payload<'_>,
    exemplars: &[ExemplarView],
) -> Result<ChatRequest, JudgeError> {
    if payload.modality() != skill.modality() {
        return Err(JudgeError::Contract(format!("{} payload sent to {skill}", payload.modality())));
    }
    let payload_key = match payload {
        Payload::Prompt(_) => "PROMPT",
        Payload::Image(_) => "IMAGE",
    };
    let template = templates.get(&skill.template_name())?;
    let mut common = Slots::new();
    let mut query = Slots::new();
    let mut blocks = Vec::new();
    match skill {
        Skill::Safety(_) | Skill::Objective(_) if !exemplars.is_empty() => {
            return Err(JudgeError::Contract(format!("{skill} runs zero-shot")));
        }
        Skill::Safety(_) => {
            query.insert(payload_key.into(), payload.slot());
        }
        Skill::Objective(m) => {
            let checklist = ctx.task.checklist_for(m);
            if checklist.is_empty() {
                return Err(JudgeError::Contract(format!("task {} has no {m} checklist", ctx.task.id)));
            }
            let lines: Vec<String> = checklist.iter().map(|c| format!("- {}", c.text)).collect();
            query.insert(payload_key.into(), payload.slot());
            query.insert("CHECKLIST".into(), Slot::Text(lines.join("\n")));
        }
        Skill::Subjective(_) => {
            let (guide_key, guidelines, input_key) = match skill.modality() {
                Modality::Prompt => ("PROMPT_EVALUATION_GUIDELINES", &templates.prompt_guidelines, "PROMPT"),
                Modality::Image => ("IMAGE_EVALUATION_GUIDELINES", &templates.image_guidelines, "IMAGE_INPUT"),
            };
            common.insert(guide_key.into(), Slot::Text(guidelines.clone()));
            query.insert("TASK".into(), ctx.task_slot()?);
            query.insert(input_key.into(), payload.slot());
            for e in exemplars {
                if e.exemplar.modality != skill.modality() {
                    return Err(JudgeError::Contract(format!(
                        "{} exemplar {} given to {skill}",
                        e.exemplar.modality, e.exemplar.id
                    )));
                }
                blocks.push(e.slots()?);
            }
        }
    }
    Ok(template.render(&common, &blocks, &query)?)
}

const REASK: &str = "Your previous reply could not be used: {error}. Reply again with ONLY the JSON object in the required format.";

fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Result of one scoring skill.
#[derive(Debug, Clone, PartialEq)]
pub enum SkillResult {
    Subjective(SubjectiveScoreSet),
    Objective(ObjectiveResult),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillOutcome {
    pub skill: Skill,
    pub retrieved: Vec<String>,
    pub result: Result<SkillResult, String>,
}

/// The judge engine: one chat model, optional embedders and memories.
#[derive(Clone)]
pub struct Judge {
    pub chat: Arc<dyn ChatClient>,
    pub text_embedder: Option<Arc<dyn Embedder>>,
    pub image_embedder: Option<Arc<dyn Embedder>>,
    pub memories: BTreeMap<MemorySkill, Arc<ExemplarMemory>>,
    pub templates: Arc<TemplateSet>,
    pub config: JudgeConfig,
}

impl Judge {
    pub fn new(chat: Arc<dyn ChatClient>) -> Self {
        Self {
            chat,
            text_embedder: None,
            image_embedder: None,
            memories: BTreeMap::new(),
            templates: Arc::new(TemplateSet::builtin()),
            config: JudgeConfig::default(),
        }
    }

    pub fn with_embedders(mut self, text: Arc<dyn Embedder>, image: Arc<dyn Embedder>) -> Self {
        self.text_embedder = Some(text);
        self.image_embedder = Some(image);
        self
    }

    pub fn with_memory(mut self, memory: Arc<ExemplarMemory>) -> Self {
        self.memories.insert(memory.skill, memory);
        self
    }

    pub fn with_templates(mut self, templates: Arc<TemplateSet>) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_config(mut self, config: JudgeConfig) -> Self {
        self.config = config;
        self
    }

    pub fn header(&self, ctx: &TaskContext, prompter_id: &str, image: Option<&ImageData>) -> RecordHeader {
        RecordHeader {
            task_id: ctx.task.id.clone(),
            prompter_id: prompter_id.to_string(),
            judge_model: self.chat.model_id().to_string(),
            judge_hyperparams: self.chat.hyperparams(),
            retrieval: self.config.retrieval.clone(),
            image_sha256: image.map(ImageData::sha256_hex),
        }
    }

    /// Sends `request`; on an unusable reply asks once more in the same
    /// conversation, then gives up.
    async fn ask<T>(
        &self,
        skill: Skill,
        request: ChatRequest,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, JudgeError> {
        let first = self.chat.complete(&request).await?;
        let error = match parse(&first) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        tracing::debug!(skill = %skill, %error, "re-asking after unusable reply");
        let mut retry = request;
        retry.messages.push(Message {
            role: Role::Assistant,
            content: vec![ContentPart::Text(first)],
        });
        retry.messages.push(Message::user(vec![ContentPart::Text(
            REASK.replace("{error}", &error.to_string()),
        )]));
        let second = self.chat.complete(&retry).await?;
        parse(&second).map_err(|error| JudgeError::Parse {
            skill: skill.id(),
            attempts: 2,
            error,
        })
    }

    pub async fn safety_check(&self, ctx: &TaskContext, payload: Payload<'_>) -> Result<SafetyVerdict, JudgeError> {
        let modality = payload.modality();
        let skill = Skill::Safety(modality);
        let run = async {
            let request = render_skill_prompt(&self.templates, skill, ctx, payload, &[])?;
            self.ask(skill, request, |raw| parse_safety_response(raw, modality)).await
        };
        run.await.map_err(|e| JudgeError::Safety {
            modality,
            message: e.to_string(),
        })
    }

    fn memory(&self, skill: MemorySkill) -> Result<&ExemplarMemory, JudgeError> {
        self.memories
            .get(&skill)
            .map(|m| m.as_ref())
            .ok_or_else(|| JudgeError::Contract(format!("memory {skill} is not loaded")))
    }

    /// Exemplars for a subjective skill under the configured strategy.
    pub async fn select_exemplars(
        &self,
        skill: MemorySkill,
        ctx: &TaskContext,
        payload: Payload<'_>,
    ) -> Result<Vec<ExemplarView>, JudgeError> {
        match &self.config.retrieval {
            Retrieval::ZeroShot => Ok(Vec::new()),
            Retrieval::FixedFewShot { prompt, image } => {
                let ids = match skill.modality() {
                    Modality::Prompt => prompt,
                    Modality::Image => image,
                };
                ids.iter()
                    .map(|id| {
                        let (memory, e) = self
                            .memories
                            .values()
                            .filter(|m| m.skill.modality() == skill.modality())
                            .find_map(|m| m.get(id).map(|e| (m, e)))
                            .ok_or_else(|| JudgeError::Contract(format!("fixed exemplar {id:?} not found")))?;
                        Ok(ExemplarView::load(e, &memory.image_root)?)
                    })
                    .collect()
            }
            Retrieval::Random { k, seed } => {
                let memory = self.memory(skill)?;
                if memory.is_empty() {
                    return Err(MemoryError::Empty(skill).into());
                }
                let key = hash_seed(&[&seed.to_le_bytes(), skill.as_str().as_bytes(), ctx.task.id.as_bytes()]);
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let mut picks = rand::seq::index::sample(&mut rng, memory.len(), (*k).min(memory.len())).into_vec();
                picks.sort_unstable();
                picks
                    .into_iter()
                    .map(|i| Ok(ExemplarView::load(&memory.entries[i], &memory.image_root)?))
                    .collect()
            }
            Retrieval::Similarity { k } => {
                let memory = self.memory(skill)?;
                let (embedder, input) = match payload {
                    Payload::Prompt(t) => (&self.text_embedder, EmbedInput::Text(t)),
                    Payload::Image(img) => (&self.image_embedder, EmbedInput::Image(img)),
                };
                let embedder = embedder
                    .as_ref()
                    .ok_or_else(|| JudgeError::Contract(format!("no {} embedder configured", skill.modality())))?;
                let query = embed(embedder.as_ref(), input).await?;
                memory
                    .retrieve_top_k(&query, *k)?
                    .into_iter()
                    .map(|hit| Ok(ExemplarView::load(hit.exemplar, &memory.image_root)?))
                    .collect()
            }
        }
    }

    async fn subjective(
        &self,
        skill: MemorySkill,
        ctx: &TaskContext,
        payload: Payload<'_>,
        retrieved: &mut Vec<String>,
    ) -> Result<SkillResult, JudgeError> {
        let exemplars = self.select_exemplars(skill, ctx, payload).await?;
        retrieved.extend(exemplars.iter().map(|e| e.exemplar.id.clone()));
        let request = render_skill_prompt(&self.templates, Skill::Subjective(skill), ctx, payload, &exemplars)?;
        let modality = skill.modality();
        let set = self
            .ask(Skill::Subjective(skill), request, |raw| parse_subjective_response(raw, modality))
            .await?;
        Ok(SkillResult::Subjective(set))
    }

    async fn objective(&self, modality: Modality, ctx: &TaskContext, payload: Payload<'_>) -> Result<SkillResult, JudgeError> {
        let request = render_skill_prompt(&self.templates, Skill::Objective(modality), ctx, payload, &[])?;
        let checklist = ctx.task.checklist_for(modality);
        let result = self
            .ask(Skill::Objective(modality), request, |raw| parse_objective_response(raw, &checklist))
            .await?;
        Ok(SkillResult::Objective(result))
    }

    /// Runs one scoring skill; failures are captured in the outcome.
    pub async fn run_skill(&self, skill: Skill, ctx: &TaskContext, payload: Payload<'_>) -> SkillOutcome {
        let mut retrieved = Vec::new();
        let result = match skill {
            Skill::Subjective(s) => self.subjective(s, ctx, payload, &mut retrieved).await,
            Skill::Objective(m) => self.objective(m, ctx, payload).await,
            Skill::Safety(_) => Err(JudgeError::Contract("safety is a gate, not a scoring skill".into())),
        };
        SkillOutcome {
            skill,
            retrieved,
            result: result.map_err(|e| e.to_string()),
        }
    }

    /// All scoring skills of `plan` for the payload's modality, concurrently.
    pub async fn run_side(&self, plan: &SkillPlan, ctx: &TaskContext, payload: Payload<'_>) -> Vec<SkillOutcome> {
        let skills = plan.scoring_skills_for(payload.modality());
        join_all(skills.into_iter().map(|s| self.run_skill(s, ctx, payload))).await
    }

    /// Both safety gates, concurrently, in prompt/image order.
    pub async fn safety_pair(
        &self,
        ctx: &TaskContext,
        prompt: &str,
        image: &ImageData,
    ) -> Result<Vec<SafetyVerdict>, JudgeError> {
        let (p, i) = futures::join!(
            self.safety_check(ctx, Payload::Prompt(prompt)),
            self.safety_check(ctx, Payload::Image(image))
        );
        Ok(vec![p?, i?])
    }

    pub fn finish(
        &self,
        plan: &SkillPlan,
        header: RecordHeader,
        safety: Vec<SafetyVerdict>,
        outcomes: Vec<SkillOutcome>,
        started: chrono::DateTime<chrono::Utc>,
    ) -> Result<EvaluationRecord, JudgeError> {
        let mut record = aggregate_evaluation(plan, header, safety, outcomes)?;
        if self.config.timestamps {
            record.timestamps = Some(Timestamps {
                started_at: started,
                finished_at: chrono::Utc::now(),
            });
        }
        Ok(record)
    }

    /// Safety gates first, then every routed skill concurrently.
    pub async fn evaluate_submission(
        &self,
        ctx: &TaskContext,
        prompter_id: &str,
        prompt: &str,
        image: &ImageData,
    ) -> Result<EvaluationRecord, JudgeError> {
        let started = chrono::Utc::now();
        let plan = SkillPlan::for_category(ctx.task.category);
        let header = self.header(ctx, prompter_id, Some(image));
        let safety = self.safety_pair(ctx, prompt, image).await?;
        if safety.iter().any(|v| v.flagged) {
            return self.finish(&plan, header, safety, Vec::new(), started);
        }
        let (mut outcomes, image_side) = futures::join!(
            self.run_side(&plan, ctx, Payload::Prompt(prompt)),
            self.run_side(&plan, ctx, Payload::Image(image))
        );
        outcomes.extend(image_side);
        self.finish(&plan, header, safety, outcomes, started)
    }
}
