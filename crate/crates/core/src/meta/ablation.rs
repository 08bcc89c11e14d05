use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::{meta_evaluate, GoldSet, MetaError, MetricReport};
use crate::judge::{EvaluationRecord, Judge, JudgeConfig, Retrieval, TaskContext};
use crate::memory::{Exemplar, ExemplarMemory, MemorySkill};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationStrategy {
    ZeroShot,
    FixedFewShot,
    Random,
    Similarity,
}

impl std::str::FromStr for AblationStrategy {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "zero_shot" => Ok(Self::ZeroShot),
            "fixed_few_shot" | "fixed" => Ok(Self::FixedFewShot),
            "random" => Ok(Self::Random),
            "similarity" => Ok(Self::Similarity),
            other => Err(MetaError::Input(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Band {
    Low,
    Mid,
    High,
}

fn mean_score(e: &Exemplar) -> f64 {
    e.scores.values().map(|s| f64::from(*s)).sum::<f64>() / e.scores.len().max(1) as f64
}

fn pick<'a>(memory: &'a ExemplarMemory, band: Band, taken: &[String]) -> Option<&'a Exemplar> {
    let key = |e: &Exemplar| match band {
        Band::Low => mean_score(e),
        Band::Mid => (mean_score(e) - 3.0).abs(),
        Band::High => -mean_score(e),
    };
    memory
        .entries
        .iter()
        .filter(|e| !taken.contains(&e.id))
        .min_by(|a, b| key(a).total_cmp(&key(b)).then_with(|| a.id.cmp(&b.id)))
}

/// Three fixed exemplars per modality spanning categories and the score
/// range. Prompt side: OE lowest, CO closest to 3, IM highest. Image side:
/// OE lowest, CO closest to 3, OE highest. Ties go to the smallest id.
pub fn fixed_few_shot_recipe(memories: &BTreeMap<MemorySkill, Arc<ExemplarMemory>>) -> Result<Retrieval, MetaError> {
    let choose = |plan: &[(MemorySkill, Band)]| -> Result<Vec<String>, MetaError> {
        let mut ids = Vec::new();
        for (skill, band) in plan {
            let memory = memories
                .get(skill)
                .ok_or_else(|| MetaError::Input(format!("fixed few-shot needs memory {skill}")))?;
            let e = pick(memory, *band, &ids).ok_or_else(|| MetaError::Input(format!("memory {skill} has too few exemplars")))?;
            ids.push(e.id.clone());
        }
        Ok(ids)
    };
    Ok(Retrieval::FixedFewShot {
        prompt: choose(&[
            (MemorySkill::PromptOE, Band::Low),
            (MemorySkill::PromptCO, Band::Mid),
            (MemorySkill::PromptIM, Band::High),
        ])?,
        image: choose(&[
            (MemorySkill::ImageOE, Band::Low),
            (MemorySkill::ImageCO, Band::Mid),
            (MemorySkill::ImageOE, Band::High),
        ])?,
    })
}

/// Judges every gold item. Items that cannot be judged are returned with
/// the reason instead of aborting the run.
pub async fn evaluate_gold(
    judge: &Judge,
    gold: &GoldSet,
    tasks: &[TaskContext],
    root: &Path,
    workers: usize,
) -> (Vec<EvaluationRecord>, Vec<(String, String)>) {
    let results: Vec<(String, Result<EvaluationRecord, String>)> = stream::iter(&gold.items)
        .map(|item| async move {
            let result = async {
                let ctx = tasks
                    .iter()
                    .find(|t| t.task.id == item.task_id)
                    .ok_or_else(|| format!("unknown task {}", item.task_id))?;
                let image_ref = item.image.as_ref().ok_or("gold item has no image")?;
                let image = image_ref.load(root).map_err(|e| e.to_string())?;
                judge
                    .evaluate_submission(ctx, &item.prompter_id, &item.prompt, &image)
                    .await
                    .map_err(|e| e.to_string())
            }
            .await;
            (item.item_id.clone(), result)
        })
        .buffered(workers.max(1))
        .collect()
        .await;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((id, e)),
        }
    }
    (records, failures)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub strategy: AblationStrategy,
    pub k: usize,
    pub retrieval: Retrieval,
    pub report: MetricReport,
    pub records: Vec<EvaluationRecord>,
}

/// The full judge pipeline over the gold set with the retrieval step
/// replaced by `strategy`.
#[allow(clippy::too_many_arguments)]
pub async fn ablation_run(
    strategy: AblationStrategy,
    k: usize,
    seed: u64,
    gold: &GoldSet,
    judge: &Judge,
    tasks: &[TaskContext],
    root: &Path,
    workers: usize,
) -> Result<AblationReport, MetaError> {
    let retrieval = match strategy {
        AblationStrategy::ZeroShot => Retrieval::ZeroShot,
        AblationStrategy::FixedFewShot => fixed_few_shot_recipe(&judge.memories)?,
        AblationStrategy::Random => Retrieval::Random { k, seed },
        AblationStrategy::Similarity => Retrieval::Similarity { k },
    };
    if k == 0 && matches!(strategy, AblationStrategy::Random | AblationStrategy::Similarity) {
        return Err(MetaError::Input("k must be at least 1".into()));
    }
    let judge = judge.clone().with_config(JudgeConfig {
        retrieval: retrieval.clone(),
        ..judge.config.clone()
    });
    let (records, failures) = evaluate_gold(&judge, gold, tasks, root, workers).await;
    let mut report = meta_evaluate(gold, &records)?;
    for (id, e) in failures {
        report.coverage.missing.retain(|m| !m.starts_with(&format!("{id}:")));
        report.coverage.missing.push(format!("{id}: {e}"));
    }
    let k = match &retrieval {
        Retrieval::ZeroShot => 0,
        Retrieval::FixedFewShot { prompt, .. } => prompt.len(),
        Retrieval::Random { k, .. } | Retrieval::Similarity { k } => *k,
    };
    Ok(AblationReport {
        strategy,
        k,
        retrieval,
        report,
        records,
    })
}
