use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TaskRunRecord;
use crate::image::Modality;
use crate::task::TaskCategory;

/// Backend id of the cross-backend cells.
pub const ALL_BACKENDS: &str = "*";
/// Category id of the cross-category cells.
pub const ALL_CATEGORIES: &str = "ALL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Checklist satisfaction, in percent.
    Objective,
    /// Mean 1-5 rubric score.
    Subjective,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub prompter_id: String,
    pub backend_id: String,
    pub category: String,
    pub modality: Modality,
    pub metric: MetricKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(flatten)]
    pub key: CellKey,
    /// `None` when no task instance contributes (reported as absent).
    pub value: Option<f64>,
    /// Contributing task instances.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub prompters: Vec<String>,
    pub backends: Vec<String>,
    pub cells: Vec<Cell>,
    pub excluded: usize,
    pub failed: usize,
}

impl AggregateReport {
    pub fn get(&self, prompter: &str, backend: &str, category: &str, modality: Modality, metric: MetricKind) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.key.prompter_id == prompter
                && c.key.backend_id == backend
                && c.key.category == category
                && c.key.modality == modality
                && c.key.metric == metric
        })
    }

    pub fn value(&self, prompter: &str, backend: &str, category: &str, modality: Modality, metric: MetricKind) -> Option<f64> {
        self.get(prompter, backend, category, modality, metric).and_then(|c| c.value)
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn finish(metric: MetricKind, x: f64) -> f64 {
    match metric {
        MetricKind::Objective => round_to(x, 1),
        MetricKind::Subjective => round_to(x, 2),
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

const MODALITIES: [Modality; 2] = [Modality::Prompt, Modality::Image];
const METRICS: [MetricKind; 2] = [MetricKind::Objective, MetricKind::Subjective];

fn categories() -> impl Iterator<Item = String> {
    TaskCategory::ALL
        .iter()
        .map(|c| c.code().to_string())
        .chain(std::iter::once(ALL_CATEGORIES.to_string()))
}

/// Per-cell means of the top-1 candidates. Cross-backend cells average the
/// per-backend cells, not the pooled instances.
pub fn aggregate_report(records: &[TaskRunRecord]) -> AggregateReport {
    let mut samples: BTreeMap<(String, String, String, Modality, MetricKind), Vec<f64>> = BTreeMap::new();
    let mut prompters = BTreeSet::new();
    let mut backends = BTreeSet::new();
    let (mut excluded, mut failed) = (0, 0);
    for r in records {
        prompters.insert(r.prompter_id.clone());
        backends.insert(r.backend_id.clone());
        if r.error.is_some() {
            failed += 1;
            continue;
        }
        let Some(selected) = r.selected() else {
            excluded += 1;
            continue;
        };
        for category in [r.category.code().to_string(), ALL_CATEGORIES.to_string()] {
            for modality in MODALITIES {
                let values = [
                    (MetricKind::Objective, selected.rate(modality).map(|x| x * 100.0)),
                    (MetricKind::Subjective, selected.subjective_mean(modality)),
                ];
                for (metric, value) in values {
                    if let Some(v) = value.filter(|v| v.is_finite()) {
                        samples
                            .entry((r.prompter_id.clone(), r.backend_id.clone(), category.clone(), modality, metric))
                            .or_default()
                            .push(v);
                    }
                }
            }
        }
    }

    let mut cells = Vec::new();
    for p in &prompters {
        for category in categories() {
            for modality in MODALITIES {
                for metric in METRICS {
                    let mut per_backend = Vec::new();
                    let mut total = 0;
                    for b in &backends {
                        let xs = samples
                            .get(&(p.clone(), b.clone(), category.clone(), modality, metric))
                            .map(Vec::as_slice)
                            .unwrap_or_default();
                        let m = mean(xs);
                        per_backend.extend(m);
                        total += xs.len();
                        cells.push(Cell {
                            key: CellKey {
                                prompter_id: p.clone(),
                                backend_id: b.clone(),
                                category: category.clone(),
                                modality,
                                metric,
                            },
                            value: m.map(|x| finish(metric, x)),
                            n: xs.len(),
                        });
                    }
                    cells.push(Cell {
                        key: CellKey {
                            prompter_id: p.clone(),
                            backend_id: ALL_BACKENDS.to_string(),
                            category: category.clone(),
                            modality,
                            metric,
                        },
                        value: mean(&per_backend).map(|x| finish(metric, x)),
                        n: total,
                    });
                }
            }
        }
    }
    cells.sort_by(|a, b| a.key.cmp(&b.key));
    AggregateReport {
        prompters: prompters.into_iter().collect(),
        backends: backends.into_iter().collect(),
        cells,
        excluded,
        failed,
    }
}

/// Plain-text table: one block per backend (cross-backend first), metric rows,
/// prompter x category columns.
pub fn format_table(report: &AggregateReport) -> String {
    let cats: Vec<String> = categories().collect();
    let mut out = String::new();
    let mut groups = vec![ALL_BACKENDS.to_string()];
    groups.extend(report.backends.iter().cloned());
    let width = 9;
    for backend in groups {
        let title = if backend == ALL_BACKENDS { "all backends".to_string() } else { format!("backend {backend}") };
        let _ = writeln!(out, "[{title}]");
        let mut header = format!("{:<16}", "");
        for p in &report.prompters {
            for c in &cats {
                let label = format!("{p}/{c}");
                let _ = write!(header, " {label:>width$}", width = width.max(label.len()));
            }
        }
        let _ = writeln!(out, "{}", header.trim_end());
        for modality in MODALITIES {
            for metric in METRICS {
                let name = match (modality, metric) {
                    (Modality::Prompt, MetricKind::Objective) => "Prompt Obj. (%)",
                    (Modality::Prompt, MetricKind::Subjective) => "Prompt Subj.",
                    (Modality::Image, MetricKind::Objective) => "Image Obj. (%)",
                    (Modality::Image, MetricKind::Subjective) => "Image Subj.",
                };
                let mut line = format!("{name:<16}");
                for p in &report.prompters {
                    for c in &cats {
                        let label_width = width.max(p.len() + c.len() + 1);
                        let text = match report.value(p, &backend, c, modality, metric) {
                            Some(v) if metric == MetricKind::Objective => format!("{v:.1}"),
                            Some(v) => format!("{v:.2}"),
                            None => "n/a".to_string(),
                        };
                        let _ = write!(line, " {text:>label_width$}");
                    }
                }
                let _ = writeln!(out, "{line}");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "excluded task runs: {}, failed task runs: {}", report.excluded, report.failed);
    out
}
