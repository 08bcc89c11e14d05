use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use super::{gate_exemplar, AgreementError, AnnotationSet, Embedder, Exemplar, ExemplarMemory, MemoryError, MemorySkill};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub id: String,
    /// Present when agreement was computable.
    pub alpha: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub accepted: Vec<(String, f64)>,
    pub rejected: Vec<Rejection>,
}

/// Gates every candidate on its annotation set and ingests the accepted ones.
///
/// Items without annotations or with undefined agreement are rejected, not
/// fatal, so the report can be used for corpus triage.
pub async fn build_memory(
    skill: MemorySkill,
    embedder: &dyn Embedder,
    candidates: Vec<Exemplar>,
    annotations: &BTreeMap<String, AnnotationSet>,
    threshold: f64,
    image_root: impl Into<PathBuf>,
) -> Result<(ExemplarMemory, BuildReport), MemoryError> {
    let mut memory = ExemplarMemory::new(skill, embedder.embedder_id(), embedder.dimension(), image_root);
    let mut report = BuildReport::default();
    let width = skill.modality().dimensions().len();
    for exemplar in candidates {
        let Some(set) = annotations.get(&exemplar.id) else {
            report.rejected.push(Rejection {
                id: exemplar.id.clone(),
                alpha: None,
                reason: "no annotation set".into(),
            });
            continue;
        };
        if set.ratings.iter().any(|r| r.len() != width) {
            return Err(MemoryError::Agreement(AgreementError::Malformed {
                item_id: set.item_id.clone(),
                message: format!("expected {width} dimension scores per rater"),
            }));
        }
        match gate_exemplar(set, threshold) {
            Ok(d) if d.accepted() => {
                report.accepted.push((exemplar.id.clone(), d.alpha()));
                memory.add_exemplar(exemplar, embedder).await?;
            }
            Ok(d) => report.rejected.push(Rejection {
                id: exemplar.id.clone(),
                alpha: Some(d.alpha()),
                reason: format!("alpha below {threshold}"),
            }),
            Err(AgreementError::Undefined(why)) => report.rejected.push(Rejection {
                id: exemplar.id.clone(),
                alpha: None,
                reason: format!("agreement undefined: {why}"),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    memory.seal();
    Ok((memory, report))
}
