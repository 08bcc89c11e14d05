//! Krippendorff's alpha with the ordinal difference function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALPHA_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgreementError {
    #[error("agreement undefined: {0}")]
    Undefined(&'static str),
    #[error("annotation set {item_id}: {message}")]
    Malformed { item_id: String, message: String },
}

/// Three raters' Likert scores for one exemplar, one row per rater and one
/// column per rubric dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub item_id: String,
    pub ratings: Vec<Vec<u8>>,
}

impl AnnotationSet {
    pub const RATERS: usize = 3;

    /// Units × raters view, with dimensions as the coded units.
    pub fn units(&self) -> Result<Vec<Vec<Option<f64>>>, AgreementError> {
        if self.ratings.len() != Self::RATERS {
            return Err(self.malformed(format!("expected 3 raters, found {}", self.ratings.len())));
        }
        let width = self.ratings[0].len();
        if self.ratings.iter().any(|r| r.len() != width) {
            return Err(self.malformed("raters scored different numbers of dimensions".into()));
        }
        if let Some(bad) = self.ratings.iter().flatten().find(|v| !(1..=5).contains(*v)) {
            return Err(self.malformed(format!("score {bad} outside 1..5")));
        }
        Ok((0..width)
            .map(|d| self.ratings.iter().map(|r| Some(f64::from(r[d]))).collect())
            .collect())
    }

    pub fn alpha(&self) -> Result<f64, AgreementError> {
        krippendorff_alpha(&self.units()?)
    }

    fn malformed(&self, message: String) -> AgreementError {
        AgreementError::Malformed {
            item_id: self.item_id.clone(),
            message,
        }
    }
}

/// Ordinal alpha over a units × raters matrix; `None` marks a missing rating.
///
/// Units with fewer than two ratings are not pairable and are dropped.
pub fn krippendorff_alpha(units: &[Vec<Option<f64>>]) -> Result<f64, AgreementError> {
    let pairable: Vec<Vec<f64>> = units
        .iter()
        .map(|u| u.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|u: &Vec<f64>| u.len() >= 2)
        .collect();
    if pairable.len() < 2 {
        return Err(AgreementError::Undefined("fewer than two pairable units"));
    }

    let mut values: Vec<f64> = pairable.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() < 2 {
        return Err(AgreementError::Undefined("only one distinct value"));
    }
    let rank = |v: f64| values.binary_search_by(|x| x.total_cmp(&v)).unwrap();
    let q = values.len();

    // Coincidence matrix.
    let mut o = vec![vec![0.0f64; q]; q];
    for unit in &pairable {
        let m = unit.len() as f64;
        for (i, a) in unit.iter().enumerate() {
            for (j, b) in unit.iter().enumerate() {
                if i != j {
                    o[rank(*a)][rank(*b)] += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();

    let delta = ordinal_deltas(&n_c);
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..q {
        for k in 0..q {
            observed += o[c][k] * delta[c][k];
            expected += n_c[c] * n_c[k] * delta[c][k];
        }
    }
    let expected = expected / (n - 1.0);
    if expected == 0.0 {
        return Err(AgreementError::Undefined("no expected disagreement"));
    }
    Ok(1.0 - observed / expected)
}

/// Squared ordinal distances between rank positions, from marginal frequencies.
fn ordinal_deltas(n_c: &[f64]) -> Vec<Vec<f64>> {
    let q = n_c.len();
    let mut d = vec![vec![0.0; q]; q];
    for c in 0..q {
        for k in c + 1..q {
            let between: f64 = n_c[c..=k].iter().sum::<f64>() - (n_c[c] + n_c[k]) / 2.0;
            d[c][k] = between * between;
            d[k][c] = d[c][k];
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum GateDecision {
    Accept { alpha: f64 },
    Reject { alpha: f64 },
}

impl GateDecision {
    pub fn accepted(&self) -> bool {
        matches!(self, GateDecision::Accept { .. })
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            GateDecision::Accept { alpha } | GateDecision::Reject { alpha } => alpha,
        }
    }
}

/// Accepts when alpha reaches the threshold (inclusive).
pub fn gate_alpha(alpha: f64, threshold: f64) -> GateDecision {
    if alpha >= threshold {
        GateDecision::Accept { alpha }
    } else {
        GateDecision::Reject { alpha }
    }
}

pub fn gate_exemplar(set: &AnnotationSet, threshold: f64) -> Result<GateDecision, AgreementError> {
    Ok(gate_alpha(set.alpha()?, threshold))
}

/// Indexes annotation sets by item id, rejecting duplicates.
pub fn index_annotations(sets: Vec<AnnotationSet>) -> Result<BTreeMap<String, AnnotationSet>, AgreementError> {
    let mut out = BTreeMap::new();
    for set in sets {
        let id = set.item_id.clone();
        if out.insert(id.clone(), set).is_some() {
            return Err(AgreementError::Malformed {
                item_id: id,
                message: "duplicate annotation set".into(),
            });
        }
    }
    Ok(out)
}
