use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::image::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mae: f64,
    /// Fraction of items within one point of gold.
    pub w1a: f64,
}

fn check_pair(pred: &[f64], gold: &[f64], min: usize) -> Result<(), MetaError> {
    if pred.len() != gold.len() {
        return Err(MetaError::Input(format!("length mismatch: {} predictions, {} gold", pred.len(), gold.len())));
    }
    if pred.len() < min {
        return Err(MetaError::Input(format!("need at least {min} items, got {}", pred.len())));
    }
    if pred.iter().chain(gold).any(|x| !x.is_finite()) {
        return Err(MetaError::Input("non-finite score".into()));
    }
    Ok(())
}

pub fn calibration_metrics(pred: &[f64], gold: &[f64]) -> Result<Calibration, MetaError> {
    check_pair(pred, gold, 1)?;
    let n = pred.len() as f64;
    let diffs = pred.iter().zip(gold).map(|(p, g)| (p - g).abs());
    let (sum, within) = diffs.fold((0.0, 0usize), |(s, w), d| (s + d, w + usize::from(d <= 1.0)));
    Ok(Calibration {
        mae: sum / n,
        w1a: within as f64 / n,
    })
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in &order[i..=j] {
            ranks[*k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman_rho(pred: &[f64], gold: &[f64]) -> Result<f64, MetaError> {
    check_pair(pred, gold, 2)?;
    pearson(&average_ranks(pred), &average_ranks(gold))
        .ok_or_else(|| MetaError::Undefined("correlation of a constant list".into()))
}

pub type CellId = (String, Modality);

/// Unweighted mean over the expected cells.
pub fn macro_average(cells: &BTreeMap<CellId, f64>, expected: &[CellId]) -> Result<f64, MetaError> {
    if expected.is_empty() {
        return Err(MetaError::Coverage("no cells expected".into()));
    }
    let mut sum = 0.0;
    for cell in expected {
        sum += cells
            .get(cell)
            .ok_or_else(|| MetaError::Coverage(format!("missing cell {} / {}", cell.1, cell.0)))?;
    }
    Ok(sum / expected.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub acc: f64,
    /// Absent when there is no positive in either list.
    pub f1: Option<f64>,
}

/// `(predicted, gold)` pairs; "satisfied" is the positive class.
pub fn objective_micro_metrics(verdicts: &[(bool, bool)]) -> Result<MicroMetrics, MetaError> {
    if verdicts.is_empty() {
        return Err(MetaError::Input("no verdicts".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, g) in verdicts {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let n = verdicts.len();
    let denom = 2 * tp + fp + fn_;
    Ok(MicroMetrics {
        n,
        tp,
        fp,
        fn_,
        tn,
        acc: (tp + tn) as f64 / n as f64,
        f1: (denom > 0).then(|| (2 * tp) as f64 / denom as f64),
    })
}
