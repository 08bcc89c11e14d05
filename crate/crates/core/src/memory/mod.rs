//! Exemplar memories for the subjective skills.
//!
//! A memory is built once (agreement-gated ingestion with embeddings computed
//! at insert time), sealed, and then only read.

mod alpha;
mod build;
mod similarity;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{embed, ClientError, EmbedInput, Embedder, Embedding};
use crate::image::{ImageError, ImageRef, Modality};
use crate::task::TaskCategory;

pub use alpha::{
    gate_alpha, gate_exemplar, index_annotations, krippendorff_alpha, AgreementError, AnnotationSet, GateDecision,
    DEFAULT_ALPHA_THRESHOLD,
};
pub use build::{build_memory, BuildReport, Rejection};
pub use similarity::{cosine_similarity, SimilarityError};
pub use store::{MemoryManifest, EMBEDDINGS_FILE, EXEMPLARS_FILE, MANIFEST_FILE};

/// Retrieval count used by the default pipeline.
pub const DEFAULT_K: usize = 3;
/// Intended number of exemplars per memory.
pub const TARGET_CAPACITY: usize = 120;

/// The five subjective skills that own a memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemorySkill {
    #[serde(rename = "prompt-OE")]
    PromptOE,
    #[serde(rename = "prompt-CO")]
    PromptCO,
    #[serde(rename = "prompt-IM")]
    PromptIM,
    #[serde(rename = "image-OE")]
    ImageOE,
    #[serde(rename = "image-CO")]
    ImageCO,
}

impl MemorySkill {
    pub const ALL: [MemorySkill; 5] = [
        MemorySkill::PromptOE,
        MemorySkill::PromptCO,
        MemorySkill::PromptIM,
        MemorySkill::ImageOE,
        MemorySkill::ImageCO,
    ];

    pub fn modality(self) -> Modality {
        match self {
            MemorySkill::PromptOE | MemorySkill::PromptCO | MemorySkill::PromptIM => Modality::Prompt,
            MemorySkill::ImageOE | MemorySkill::ImageCO => Modality::Image,
        }
    }

    pub fn category(self) -> TaskCategory {
        match self {
            MemorySkill::PromptOE | MemorySkill::ImageOE => TaskCategory::OpenEnded,
            MemorySkill::PromptCO | MemorySkill::ImageCO => TaskCategory::Constrained,
            MemorySkill::PromptIM => TaskCategory::Imitation,
        }
    }

    /// The memory serving `modality` for `category`, if one exists.
    pub fn for_task(modality: Modality, category: TaskCategory) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.modality() == modality && s.category() == category)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MemorySkill::PromptOE => "prompt-OE",
            MemorySkill::PromptCO => "prompt-CO",
            MemorySkill::PromptIM => "prompt-IM",
            MemorySkill::ImageOE => "image-OE",
            MemorySkill::ImageCO => "image-CO",
        }
    }
}

impl fmt::Display for MemorySkill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MemorySkill {
    type Err = MemoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MemoryError::Schema(format!("unknown memory skill {s:?}")))
    }
}

/// What an exemplar shows: a prompt text or an image file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Text { text: String },
    Image { image: ImageRef },
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Text { .. } => Modality::Prompt,
            Payload::Image { .. } => Modality::Image,
        }
    }
}

/// A consensus-scored prompt or image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: String,
    pub task_id: String,
    pub modality: Modality,
    /// Task text shown alongside the exemplar when it is rendered.
    pub task: String,
    pub payload: Payload,
    pub scores: BTreeMap<String, u8>,
    pub rationales: BTreeMap<String, String>,
    /// Lives in the binary sidecar, not in the JSON record.
    #[serde(skip)]
    pub embedding: Vec<f32>,
}

impl Exemplar {
    /// Checks the rubric coverage and payload/modality agreement.
    pub fn check_schema(&self) -> Result<(), MemoryError> {
        let fail = |m: String| Err(MemoryError::Schema(format!("exemplar {}: {m}", self.id)));
        if self.payload.modality() != self.modality {
            return fail(format!("{} payload on a {} exemplar", self.payload.modality(), self.modality));
        }
        let dims = self.modality.dimensions();
        for d in dims {
            match self.scores.get(*d) {
                None => return fail(format!("missing score for {d}")),
                Some(s) if !(1..=5).contains(s) => return fail(format!("score {s} for {d} outside 1..5")),
                Some(_) => {}
            }
            if self.rationales.get(*d).is_none_or(|r| r.trim().is_empty()) {
                return fail(format!("missing rationale for {d}"));
            }
        }
        if let Some(extra) = self.scores.keys().find(|k| !dims.contains(&k.as_str())) {
            return fail(format!("unexpected dimension {extra}"));
        }
        Ok(())
    }

    /// Scores in rubric order, serialized as the gold reply a judge should give.
    pub fn gold_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        for d in self.modality.dimensions() {
            obj.insert(
                d.to_string(),
                serde_json::json!({
                    "score": self.scores.get(*d).copied().unwrap_or_default(),
                    "rationale": self.rationales.get(*d).cloned().unwrap_or_default(),
                }),
            );
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("json")
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("embedding failed for exemplar {id}: {source}")]
    Ingestion {
        id: String,
        #[source]
        source: ClientError,
    },
    #[error("memory {0} is sealed")]
    Sealed(MemorySkill),
    #[error("memory {0} is empty")]
    Empty(MemorySkill),
    #[error("query embedded with {found}, memory uses {expected}")]
    EmbedderMismatch { expected: String, found: String },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("memory store {path}: {message}")]
    Store { path: String, message: String },
}

/// One retrieval hit.
#[derive(Debug, Clone, Copy)]
pub struct Retrieved<'a> {
    pub exemplar: &'a Exemplar,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarMemory {
    pub skill: MemorySkill,
    pub embedder_id: String,
    pub dimension: usize,
    pub entries: Vec<Exemplar>,
    pub sealed: bool,
    /// Directory that image payload paths are relative to.
    pub image_root: PathBuf,
}

impl ExemplarMemory {
    pub fn new(skill: MemorySkill, embedder_id: impl Into<String>, dimension: usize, image_root: impl Into<PathBuf>) -> Self {
        Self {
            skill,
            embedder_id: embedder_id.into(),
            dimension,
            entries: Vec::new(),
            sealed: false,
            image_root: image_root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn get(&self, id: &str) -> Option<&Exemplar> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Embeds `exemplar` and appends it, replacing any entry with the same id.
    pub async fn add_exemplar(&mut self, mut exemplar: Exemplar, embedder: &dyn Embedder) -> Result<(), MemoryError> {
        if self.sealed {
            return Err(MemoryError::Sealed(self.skill));
        }
        if exemplar.modality != self.skill.modality() {
            return Err(MemoryError::Schema(format!(
                "{} exemplar {} cannot join memory {}",
                exemplar.modality, exemplar.id, self.skill
            )));
        }
        exemplar.check_schema()?;
        if embedder.embedder_id() != self.embedder_id || embedder.dimension() != self.dimension {
            return Err(MemoryError::EmbedderMismatch {
                expected: format!("{} ({} dims)", self.embedder_id, self.dimension),
                found: format!("{} ({} dims)", embedder.embedder_id(), embedder.dimension()),
            });
        }
        let ingestion = |source| MemoryError::Ingestion {
            id: exemplar.id.clone(),
            source,
        };
        let embedding = match &exemplar.payload {
            Payload::Text { text } => embed(embedder, EmbedInput::Text(text)).await.map_err(ingestion)?,
            Payload::Image { image } => {
                let data = image.load(&self.image_root)?;
                embed(embedder, EmbedInput::Image(&data)).await.map_err(ingestion)?
            }
        };
        exemplar.embedding = embedding.vector;
        match self.entries.iter_mut().find(|e| e.id == exemplar.id) {
            Some(slot) => *slot = exemplar,
            None => self.entries.push(exemplar),
        }
        Ok(())
    }

    /// Exact top-`k` scan by cosine similarity, ties broken by ascending id.
    pub fn retrieve_top_k(&self, query: &Embedding, k: usize) -> Result<Vec<Retrieved<'_>>, MemoryError> {
        if self.entries.is_empty() {
            return Err(MemoryError::Empty(self.skill));
        }
        if query.embedder_id != self.embedder_id {
            return Err(MemoryError::EmbedderMismatch {
                expected: self.embedder_id.clone(),
                found: query.embedder_id.clone(),
            });
        }
        let mut scored = self
            .entries
            .iter()
            .map(|e| {
                Ok(Retrieved {
                    exemplar: e,
                    similarity: cosine_similarity(&query.vector, &e.embedding)?,
                })
            })
            .collect::<Result<Vec<_>, SimilarityError>>()?;
        scored.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.exemplar.id.cmp(&b.exemplar.id))
        });
        scored.truncate(k);
        Ok(scored)
    }
}
