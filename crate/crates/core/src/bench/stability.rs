use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::{select_top1, BenchContext, BenchError, Candidate, PrompterSpec, RunConfig};
use crate::image::Modality;
use crate::judge::{EvaluationRecord, TaskContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Image counts swept with a single prompt.
    pub n_images: Vec<usize>,
    /// Prompt counts swept with `fixed_images` images per prompt.
    pub n_prompts: Vec<usize>,
    pub fixed_images: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            n_images: vec![1, 2, 4, 8],
            n_prompts: vec![1, 2, 4],
            fixed_images: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Images,
    Prompts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub n_prompts: usize,
    pub n_images: usize,
    /// Mean top-1 image satisfaction, in percent.
    pub image_objective: Option<f64>,
    pub image_subjective: Option<f64>,
    pub prompt_objective: Option<f64>,
    pub prompt_subjective: Option<f64>,
    /// Top-1 image satisfaction rate per task.
    pub per_task: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub prompter_id: String,
    pub backend_id: String,
    pub points: Vec<SweepPoint>,
    /// Tasks that produced no candidate, with the reason.
    pub skipped: BTreeMap<String, String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn top1<'a>(candidates: &'a [Candidate], n_prompts: usize, n_images: usize) -> Option<&'a EvaluationRecord> {
    let pool: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| c.prompt_index < n_prompts && c.image_index < n_images)
        .collect();
    let records: Vec<EvaluationRecord> = pool.iter().map(|c| c.record.clone()).collect();
    select_top1(&records).ok().map(|i| &pool[i].record)
}

/// Sweeps best-of-N settings over nested candidate pools: the largest pool is
/// generated and judged once and each grid point selects within its prefix.
pub async fn stability_sweep(
    bench: &BenchContext,
    spec: &PrompterSpec,
    tasks: &[TaskContext],
    backend_id: &str,
    grid: &SweepGrid,
    run: &RunConfig,
) -> Result<SweepTable, BenchError> {
    if grid.n_images.iter().chain(&grid.n_prompts).any(|n| *n == 0) || grid.fixed_images == 0 {
        return Err(BenchError::Precondition("sweep sizes must be at least 1".into()));
    }
    let max_prompts = grid.n_prompts.iter().copied().max().unwrap_or(1).max(1);
    let max_images = grid.n_images.iter().copied().chain([grid.fixed_images]).max().unwrap_or(1);

    let pools: Vec<(String, Result<Vec<Candidate>, BenchError>)> = stream::iter(tasks)
        .map(|ctx| async move {
            let result = match bench.elicit_prompts(spec, ctx, max_prompts).await {
                Ok(prompts) => bench.judge_candidates(spec, ctx, backend_id, &prompts, max_images).await,
                Err(e) => Err(e),
            };
            (ctx.task.id.clone(), result)
        })
        .buffered(run.workers.max(1))
        .collect()
        .await;

    let mut skipped = BTreeMap::new();
    let mut ok = Vec::new();
    for (task, pool) in pools {
        match pool {
            Ok(c) => ok.push((task, c)),
            Err(e) => {
                skipped.insert(task, e.to_string());
            }
        }
    }

    let settings = grid
        .n_images
        .iter()
        .map(|n| (SweepAxis::Images, 1, *n))
        .chain(grid.n_prompts.iter().map(|p| (SweepAxis::Prompts, *p, grid.fixed_images)));
    let points = settings
        .map(|(axis, n_prompts, n_images)| {
            let chosen: Vec<(&str, &EvaluationRecord)> = ok
                .iter()
                .filter_map(|(t, c)| top1(c, n_prompts, n_images).map(|r| (t.as_str(), r)))
                .collect();
            let metric = |f: &dyn Fn(&EvaluationRecord) -> Option<f64>| mean(chosen.iter().filter_map(|(_, r)| f(r)));
            SweepPoint {
                axis,
                n_prompts,
                n_images,
                image_objective: metric(&|r| r.rate(Modality::Image).map(|x| x * 100.0)),
                image_subjective: metric(&|r| r.subjective_mean(Modality::Image)),
                prompt_objective: metric(&|r| r.rate(Modality::Prompt).map(|x| x * 100.0)),
                prompt_subjective: metric(&|r| r.subjective_mean(Modality::Prompt)),
                per_task: chosen
                    .iter()
                    .filter_map(|(t, r)| r.rate(Modality::Image).map(|x| (t.to_string(), x)))
                    .collect(),
            }
        })
        .collect();
    Ok(SweepTable {
        prompter_id: spec.prompter_id.clone(),
        backend_id: backend_id.to_string(),
        points,
        skipped,
    })
}
