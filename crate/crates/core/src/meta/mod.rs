//! Meta-evaluation of the judge against expert gold annotations:
//! calibration (MAE, within-1 accuracy, Spearman's rho) for subjective
//! skills, micro accuracy/F1 for objective skills, the human leave-one-out
//! baseline and retrieval ablations.

mod ablation;
mod gold;
mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Modality;
use crate::judge::EvaluationRecord;
use crate::task::TaskCategory;

pub use ablation::{ablation_run, evaluate_gold, fixed_few_shot_recipe, AblationReport, AblationStrategy};
pub use gold::{GoldItem, GoldSet, RATERS};
pub use metrics::{
    average_ranks, calibration_metrics, macro_average, objective_micro_metrics, spearman_rho, Calibration, CellId,
    MicroMetrics,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetaError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("coverage: {0}")]
    Coverage(String),
    #[error("io: {0}")]
    Io(String),
    #[error("judge: {0}")]
    Judge(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub dimension: String,
    pub modality: Modality,
    pub n: usize,
    pub mae: f64,
    pub w1a: f64,
    /// Absent when either side is constant over the cell.
    pub rho: Option<f64>,
}

/// Macro averages over a set of cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mae: Option<f64>,
    pub w1a: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub overall: Option<MicroMetrics>,
    pub per_modality: BTreeMap<Modality, MicroMetrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub items: usize,
    pub scored_items: usize,
    /// `item_id: reason` for every item or cell that could not be scored.
    pub missing: Vec<String>,
    /// Cells whose rho is undefined and left out of the rho macro average.
    pub undefined_rho: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Macro over (dimension x modality) cells.
    #[serde(flatten)]
    pub macro_avg: Summary,
    pub cells: Vec<CellMetrics>,
    pub per_modality: BTreeMap<Modality, Summary>,
    pub per_category: BTreeMap<String, Summary>,
    pub objective: ObjectiveReport,
    pub coverage: Coverage,
}

/// Paired observations grouped for reporting.
#[derive(Debug, Default)]
struct Samples {
    subjective: BTreeMap<CellId, Vec<(f64, f64, Option<TaskCategory>)>>,
    objective: BTreeMap<Modality, Vec<(bool, bool)>>,
    coverage: Coverage,
}

fn cell_metrics(cell: &CellId, rows: &[(f64, f64)]) -> Option<CellMetrics> {
    let (pred, gold): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
    let c = calibration_metrics(&pred, &gold).ok()?;
    Some(CellMetrics {
        dimension: cell.0.clone(),
        modality: cell.1,
        n: rows.len(),
        mae: c.mae,
        w1a: c.w1a,
        rho: spearman_rho(&pred, &gold).ok(),
    })
}

/// Macro summary over `expected` cells. Missing cells leave MAE and W1-A
/// absent; undefined rho cells are dropped from the rho mean only.
fn summarize(cells: &[CellMetrics], expected: &[CellId], undefined: &mut Vec<String>) -> Summary {
    let by_id: BTreeMap<CellId, &CellMetrics> = cells.iter().map(|c| ((c.dimension.clone(), c.modality), c)).collect();
    let pick = |f: &dyn Fn(&CellMetrics) -> Option<f64>| -> BTreeMap<CellId, f64> {
        by_id.iter().filter_map(|(k, c)| f(c).map(|v| (k.clone(), v))).collect()
    };
    let mae = macro_average(&pick(&|c| Some(c.mae)), expected).ok();
    let w1a = macro_average(&pick(&|c| Some(c.w1a)), expected).ok();
    let rhos = pick(&|c| c.rho);
    let defined: Vec<CellId> = expected.iter().filter(|c| rhos.contains_key(*c)).cloned().collect();
    for c in expected.iter().filter(|c| by_id.contains_key(*c) && !rhos.contains_key(*c)) {
        undefined.push(format!("{} / {}", c.1, c.0));
    }
    Summary {
        mae,
        w1a,
        rho: macro_average(&rhos, &defined).ok(),
    }
}

fn expected_cells(modalities: &[Modality]) -> Vec<CellId> {
    modalities
        .iter()
        .flat_map(|m| m.dimensions().iter().map(move |d| (d.to_string(), *m)))
        .collect()
}

impl Samples {
    fn report(mut self, modalities: &[Modality]) -> MetricReport {
        let expected = expected_cells(modalities);
        let cells_for = |filter: &dyn Fn(Option<TaskCategory>) -> bool| -> Vec<CellMetrics> {
            self.subjective
                .iter()
                .filter_map(|(cell, rows)| {
                    let rows: Vec<(f64, f64)> = rows.iter().filter(|r| filter(r.2)).map(|r| (r.0, r.1)).collect();
                    cell_metrics(cell, &rows)
                })
                .collect()
        };
        let cells = cells_for(&|_| true);
        for cell in &expected {
            if !cells.iter().any(|c| c.dimension == cell.0 && c.modality == cell.1) {
                self.coverage.missing.push(format!("cell {} / {}: no scored items", cell.1, cell.0));
            }
        }
        let mut undefined = Vec::new();
        let macro_avg = summarize(&cells, &expected, &mut undefined);
        let per_modality = modalities
            .iter()
            .map(|m| {
                let exp: Vec<CellId> = expected.iter().filter(|c| c.1 == *m).cloned().collect();
                (*m, summarize(&cells, &exp, &mut Vec::new()))
            })
            .collect();
        let mut per_category = BTreeMap::new();
        for category in TaskCategory::ALL {
            let cat_cells = cells_for(&|c| c == Some(category));
            if cat_cells.is_empty() {
                continue;
            }
            let exp: Vec<CellId> = cat_cells.iter().map(|c| (c.dimension.clone(), c.modality)).collect();
            per_category.insert(category.code().to_string(), summarize(&cat_cells, &exp, &mut Vec::new()));
        }
        let mut objective = ObjectiveReport::default();
        let mut all = Vec::new();
        for (m, v) in &self.objective {
            if let Ok(mm) = objective_micro_metrics(v) {
                objective.per_modality.insert(*m, mm);
            }
            all.extend_from_slice(v);
        }
        objective.overall = objective_micro_metrics(&all).ok();
        self.coverage.undefined_rho = undefined;
        MetricReport {
            macro_avg,
            cells,
            per_modality,
            per_category,
            objective,
            coverage: self.coverage,
        }
    }
}

/// Judge records against gold. Records are matched to items by
/// (task id, prompter id); unmatched items count as coverage loss.
pub fn meta_evaluate(gold: &GoldSet, records: &[EvaluationRecord]) -> Result<MetricReport, MetaError> {
    gold.check()?;
    let by_key: BTreeMap<(&str, &str), &EvaluationRecord> = records
        .iter()
        .map(|r| ((r.header.task_id.as_str(), r.header.prompter_id.as_str()), r))
        .collect();
    let mut samples = Samples::default();
    samples.coverage.items = gold.items.len();
    for item in &gold.items {
        let Some(record) = by_key.get(&(item.task_id.as_str(), item.prompter_id.as_str())) else {
            samples.coverage.missing.push(format!("{}: no judge record", item.item_id));
            continue;
        };
        if record.excluded {
            samples.coverage.missing.push(format!("{}: excluded by safety", item.item_id));
            continue;
        }
        let category = item.category.or(Some(record.category));
        let mut complete = true;
        for modality in item.ratings.keys() {
            let gold_scores = item.gold_scores(*modality).unwrap_or_default();
            let Some(pred) = record.subjective_for(*modality) else {
                samples.coverage.missing.push(format!("{}: no {modality} subjective scores", item.item_id));
                complete = false;
                continue;
            };
            for (dim, g) in modality.dimensions().iter().zip(gold_scores) {
                match pred.scores.get(*dim) {
                    Some(p) => samples
                        .subjective
                        .entry((dim.to_string(), *modality))
                        .or_default()
                        .push((f64::from(*p), g, category)),
                    None => {
                        samples.coverage.missing.push(format!("{}: no score for {dim}", item.item_id));
                        complete = false;
                    }
                }
            }
        }
        for (modality, verdicts) in &item.checkpoints {
            let Some(pred) = record.objective_for(*modality) else {
                samples.coverage.missing.push(format!("{}: no {modality} objective verdicts", item.item_id));
                complete = false;
                continue;
            };
            for (id, g) in verdicts {
                match pred.verdicts.get(id) {
                    Some(p) => samples.objective.entry(*modality).or_default().push((*p, *g)),
                    None => {
                        samples.coverage.missing.push(format!("{}: no verdict for {id}", item.item_id));
                        complete = false;
                    }
                }
            }
        }
        samples.coverage.scored_items += usize::from(complete);
    }
    Ok(samples.report(&gold.rated_modalities()))
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_summary<'a>(xs: impl Iterator<Item = &'a Summary> + Clone) -> Summary {
    Summary {
        mae: mean_opt(xs.clone().map(|s| s.mae)),
        w1a: mean_opt(xs.clone().map(|s| s.w1a)),
        rho: mean_opt(xs.map(|s| s.rho)),
    }
}

/// Each rater scored against the mean of the other two; fold reports are
/// averaged field by field.
pub fn human_loo_baseline(gold: &GoldSet) -> Result<MetricReport, MetaError> {
    gold.check()?;
    if gold.items.iter().all(|i| i.ratings.is_empty()) {
        return Err(MetaError::Input("no rated items".into()));
    }
    let modalities = gold.rated_modalities();
    let folds: Vec<MetricReport> = (0..RATERS)
        .map(|r| {
            let mut samples = Samples::default();
            samples.coverage.items = gold.items.len();
            for item in &gold.items {
                for (modality, raters) in &item.ratings {
                    for (d, dim) in modality.dimensions().iter().enumerate() {
                        let others: Vec<f64> = (0..RATERS).filter(|o| *o != r).map(|o| f64::from(raters[o][d])).collect();
                        let target = others.iter().sum::<f64>() / others.len() as f64;
                        samples
                            .subjective
                            .entry((dim.to_string(), *modality))
                            .or_default()
                            .push((f64::from(raters[r][d]), target, item.category));
                    }
                }
                samples.coverage.scored_items += usize::from(!item.ratings.is_empty());
            }
            samples.report(&modalities)
        })
        .collect();

    let mut out = folds[0].clone();
    out.macro_avg = mean_summary(folds.iter().map(|f| &f.macro_avg));
    for (i, cell) in out.cells.iter_mut().enumerate() {
        let fold_cells: Vec<&CellMetrics> = folds.iter().map(|f| &f.cells[i]).collect();
        cell.mae = fold_cells.iter().map(|c| c.mae).sum::<f64>() / RATERS as f64;
        cell.w1a = fold_cells.iter().map(|c| c.w1a).sum::<f64>() / RATERS as f64;
        cell.rho = mean_opt(fold_cells.iter().map(|c| c.rho));
    }
    for (m, s) in out.per_modality.iter_mut() {
        *s = mean_summary(folds.iter().filter_map(|f| f.per_modality.get(m)));
    }
    for (c, s) in out.per_category.iter_mut() {
        *s = mean_summary(folds.iter().filter_map(|f| f.per_category.get(c)));
    }
    let mut undefined: Vec<String> = folds.iter().flat_map(|f| f.coverage.undefined_rho.clone()).collect();
    undefined.sort();
    undefined.dedup();
    out.coverage.undefined_rho = undefined;
    Ok(out)
}

/// Plain-text rendering of a report.
pub fn format_report(report: &MetricReport) -> String {
    use std::fmt::Write as _;
    let f = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
    let mut out = String::new();
    let s = &report.macro_avg;
    let _ = writeln!(out, "macro  MAE {}  W1-A {}  rho {}", f(s.mae), f(s.w1a), f(s.rho));
    for (m, s) in &report.per_modality {
        let _ = writeln!(out, "{m:<6} MAE {}  W1-A {}  rho {}", f(s.mae), f(s.w1a), f(s.rho));
    }
    for (c, s) in &report.per_category {
        let _ = writeln!(out, "{c:<6} MAE {}  W1-A {}  rho {}", f(s.mae), f(s.w1a), f(s.rho));
    }
    for c in &report.cells {
        let _ = writeln!(
            out,
            "  {:<6} {:<26} n={:<3} MAE {:.3}  W1-A {:.3}  rho {}",
            c.modality.as_str(),
            c.dimension,
            c.n,
            c.mae,
            c.w1a,
            f(c.rho)
        );
    }
    let o = &report.objective;
    let micro = |m: Option<&MicroMetrics>| match m {
        Some(m) => format!("Acc {:.3}  F1 {}  (n={})", m.acc, f(m.f1), m.n),
        None => "n/a".into(),
    };
    let _ = writeln!(out, "objective overall {}", micro(o.overall.as_ref()));
    for (m, mm) in &o.per_modality {
        let _ = writeln!(out, "objective {m:<7} {}", micro(Some(mm)));
    }
    let c = &report.coverage;
    let _ = writeln!(out, "coverage {}/{} items", c.scored_items, c.items);
    for m in &c.missing {
        let _ = writeln!(out, "  missing {m}");
    }
    for m in &c.undefined_rho {
        let _ = writeln!(out, "  rho undefined for {m}");
    }
    out
}
