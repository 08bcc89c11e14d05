//! Benchmark tasks and their composition grammar.
//!
//! A task pairs an intent representation (a noisy brief, a structured
//! specification, or a target image) with challenge-primitive counts,
//! application-context tags and a paired prompt/image checklist.

mod checklist;
mod corpus;
mod sample;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageRef, Modality};

pub use checklist::{compare_natural, paired_checkpoints, CheckpointPair, PairingError};
pub use corpus::{parse_tasks, read_tasks, serialize_tasks, ParseError, TaskFileFormat};
pub use sample::{stratified_sample, SampleError};
pub use validate::{validate_task, ValidationReport, Violation};

/// The three task categories: open-ended creation, constrained creation and
/// imitation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskCategory {
    #[serde(rename = "OE")]
    OpenEnded,
    #[serde(rename = "CO")]
    Constrained,
    #[serde(rename = "IM")]
    Imitation,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 3] = [
        TaskCategory::OpenEnded,
        TaskCategory::Constrained,
        TaskCategory::Imitation,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TaskCategory::OpenEnded => "OE",
            TaskCategory::Constrained => "CO",
            TaskCategory::Imitation => "IM",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task category {0:?} (expected OE, CO or IM)")]
pub struct UnknownCategory(pub String);

impl FromStr for TaskCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OE" => Ok(TaskCategory::OpenEnded),
            "CO" => Ok(TaskCategory::Constrained),
            "IM" => Ok(TaskCategory::Imitation),
            _ => Err(UnknownCategory(s.to_string())),
        }
    }
}

/// Semantic (S1–S4) and constraint (C1–C5) challenge primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChallengePrimitive {
    /// Abstract or affective intent requiring visualisation.
    S1,
    /// Intent specified through a target audience.
    S2,
    /// Style or medium implied but not named.
    S3,
    /// What must not be generated, at the semantic level.
    S4,
    /// Attributes bound to the correct entities.
    C1,
    /// Explicit spatial or layout relations.
    C2,
    /// Exact object counts.
    C3,
    /// Exact rendered text.
    C4,
    /// Global, non-relaxable generation constraints.
    C5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveClass {
    Semantic,
    Constraint,
}

impl ChallengePrimitive {
    pub const ALL: [ChallengePrimitive; 9] = [
        ChallengePrimitive::S1,
        ChallengePrimitive::S2,
        ChallengePrimitive::S3,
        ChallengePrimitive::S4,
        ChallengePrimitive::C1,
        ChallengePrimitive::C2,
        ChallengePrimitive::C3,
        ChallengePrimitive::C4,
        ChallengePrimitive::C5,
    ];

    pub fn class(self) -> PrimitiveClass {
        use ChallengePrimitive::*;
        match self {
            S1 | S2 | S3 | S4 => PrimitiveClass::Semantic,
            C1 | C2 | C3 | C4 | C5 => PrimitiveClass::Constraint,
        }
    }

    pub fn name(self) -> &'static str {
        use ChallengePrimitive::*;
        match self {
            S1 => "abstract intent",
            S2 => "audience intent",
            S3 => "implicit style",
            S4 => "semantic negation",
            C1 => "attribute binding",
            C2 => "spatial relation",
            C3 => "quantity",
            C4 => "text",
            C5 => "hard constraint",
        }
    }
}

/// Application-context tag vocabulary, one list per dimension.
pub mod tags {
    pub const ENTITIES: &[&str] = &["Object", "Character", "Environment", "Typography", "Data_Element"];
    pub const STRUCTURE: &[&str] = &[
        "Portrait_CloseUp",
        "Full_Body_Shot",
        "Schematic_Diagram",
        "Knolling_Layout",
        "Sequential_Panel",
        "UI_Interface",
        "Isometric_View",
    ];
    pub const VISUAL_STYLE: &[&str] = &[
        "Photorealistic",
        "Traditional_Media",
        "Vector_Flat",
        "3D_Render",
        "Cel_Shaded",
    ];
    pub const THEME_CONTEXT: &[&str] = &[
        "Corporate_Clean",
        "SciFi_Cyberpunk",
        "Fantasy_Mythic",
        "Abstract_Conceptual",
        "Cute_Pop",
        "Retro_Vintage",
        "Horror_Dark",
    ];
}

/// Multi-label application-context annotation. Tags are non-exclusive both
/// across and within dimensions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTags {
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub structure: Vec<String>,
    #[serde(default)]
    pub visual_style: Vec<String>,
    #[serde(default)]
    pub theme_context: Vec<String>,
}

impl ContextTags {
    /// `(dimension name, tags, vocabulary)` triples.
    pub fn dimensions(&self) -> [(&'static str, &[String], &'static [&'static str]); 4] {
        [
            ("entities", &self.entities, tags::ENTITIES),
            ("structure", &self.structure, tags::STRUCTURE),
            ("visual_style", &self.visual_style, tags::VISUAL_STYLE),
            ("theme_context", &self.theme_context, tags::THEME_CONTEXT),
        ]
    }
}

/// One binary checklist criterion on either the prompt or the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub id: String,
    pub modality: Modality,
    /// Verbatim criterion text; judges must echo it character for character.
    pub text: String,
    /// Links the prompt-side and image-side checkpoints of one constraint.
    pub pair_id: String,
}

/// Ordered `section name -> text` map for CO structured constraints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sections(pub Vec<(String, String)>);

impl Sections {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl Serialize for Sections {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Sections {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct SectionsVisitor;

        impl<'de> serde::de::Visitor<'de> for SectionsVisitor {
            type Value = Sections;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of section name to text")
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut access: A) -> Result<Sections, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    if out.iter().any(|(existing, _): &(String, String)| *existing == k) {
                        return Err(serde::de::Error::custom(format!("duplicate section {k:?}")));
                    }
                    out.push((k, v));
                }
                Ok(Sections(out))
            }
        }

        deserializer.deserialize_map(SectionsVisitor)
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub category: TaskCategory,
    pub title: String,
    /// Natural-language brief (OE, CO); absent for IM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Structured constraint sections (CO only).
    #[serde(default, skip_serializing_if = "Sections::is_empty")]
    pub structured_constraints: Sections,
    /// Target image (IM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_image: Option<ImageRef>,
    #[serde(default)]
    pub semantic_counts: BTreeMap<ChallengePrimitive, u32>,
    #[serde(default)]
    pub constraint_counts: BTreeMap<ChallengePrimitive, u32>,
    #[serde(default)]
    pub tags: ContextTags,
    pub checklist: Vec<Checkpoint>,
}

/// Instruction shown for imitation tasks, which carry no textual brief.
pub const IMITATION_INSTRUCTION: &str = "Write a single text-to-image prompt that reproduces the target image as \
closely as possible: its subjects, composition, materials, colours, lighting and overall mood.";

impl Task {
    /// The task as presented to a prompter or judge in text form.
    pub fn brief(&self) -> String {
        let mut out = format!("{}\n\n", self.title);
        match self.category {
            TaskCategory::Imitation => out.push_str(IMITATION_INSTRUCTION),
            _ => {
                if let Some(desc) = &self.description {
                    out.push_str(desc.trim());
                }
                for (name, text) in self.structured_constraints.iter() {
                    out.push_str(&format!("\n\n{name}:\n{}", text.trim()));
                }
            }
        }
        out
    }

    pub fn checklist_for(&self, modality: Modality) -> Vec<Checkpoint> {
        self.checklist
            .iter()
            .filter(|c| c.modality == modality)
            .cloned()
            .collect()
    }

    pub fn semantic_total(&self) -> u32 {
        self.semantic_counts.values().sum()
    }

    pub fn active_constraint_kinds(&self) -> usize {
        self.constraint_counts.values().filter(|n| **n > 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_primitives_split_into_two_disjoint_classes() {
        let semantic: Vec<_> = ChallengePrimitive::ALL
            .iter()
            .filter(|p| p.class() == PrimitiveClass::Semantic)
            .collect();
        assert_eq!(ChallengePrimitive::ALL.len(), 9);
        assert_eq!(semantic.len(), 4);
    }

    #[test]
    fn category_parsing() {
        assert_eq!("oe".parse::<TaskCategory>().unwrap(), TaskCategory::OpenEnded);
        assert_eq!("IM".parse::<TaskCategory>().unwrap(), TaskCategory::Imitation);
        assert!("XX".parse::<TaskCategory>().is_err());
    }

    #[test]
    fn sections_keep_document_order() {
        let s: Sections = serde_json::from_str(r#"{"Layout":"a","Brief":"b","Quantity":"c"}"#).unwrap();
        let names: Vec<_> = s.iter().map(|(k, _)| k).collect();
        assert_eq!(names, ["Layout", "Brief", "Quantity"]);
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"Layout":"a","Brief":"b","Quantity":"c"}"#);
        assert!(serde_json::from_str::<Sections>(r#"{"a":"1","a":"2"}"#).is_err());
    }
}
