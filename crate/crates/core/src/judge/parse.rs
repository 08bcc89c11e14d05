//! Strict readers for judge replies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{Deserialize, Deserializer, MapAccess, Visitor};
use serde_json::Value;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use super::{ObjectiveResult, SafetyVerdict, SubjectiveScoreSet};
use crate::image::Modality;
use crate::task::Checkpoint;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply contains no JSON object")]
    NoObject,
    #[error("reply contains {0} top-level JSON objects, expected exactly one")]
    MultipleObjects(usize),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("missing dimension {0:?}")]
    MissingDimension(String),
    #[error("dimension {dimension:?}: {message}")]
    BadScore { dimension: String, message: String },
    #[error("reply keys do not match the checklist (missing {missing:?}, unexpected {unexpected:?})")]
    StrictKey {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("checklist item {key:?}: value {value} is not 0 or 1")]
    Value { key: String, value: String },
    #[error("checklist is empty")]
    EmptyChecklist,
    #[error("checklist texts collide after normalization: {0:?}")]
    AmbiguousChecklist(String),
    #[error("safety verdict: {0}")]
    Safety(String),
}

/// A JSON object with its keys in document order, duplicates kept.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObject(pub Vec<(String, Value)>);

impl<'de> Deserialize<'de> for RawObject {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawObject;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawObject, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(RawObject(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Finds every top-level JSON object embedded in free text; code fences and
/// surrounding prose are skipped.
pub fn find_objects(raw: &str) -> Vec<RawObject> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(rel) = raw[i..].find('{') {
        let start = i + rel;
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<RawObject>();
        match stream.next() {
            Some(Ok(obj)) => {
                out.push(obj);
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    out
}

/// The single top-level object of a reply.
pub fn extract_single_object(raw: &str) -> Result<RawObject, ParseError> {
    let mut objects = find_objects(raw);
    match objects.len() {
        0 => Err(ParseError::NoObject),
        1 => Ok(objects.pop().unwrap()),
        n => Err(ParseError::MultipleObjects(n)),
    }
}

/// NFC normalization plus surrounding-whitespace trim.
pub fn normalize_key(s: &str) -> String {
    s.nfc().collect::<String>().trim().to_string()
}

fn strict_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64(),
        _ => None,
    }
}

pub fn parse_subjective_response(raw: &str, modality: Modality) -> Result<SubjectiveScoreSet, ParseError> {
    let obj = extract_single_object(raw)?;
    let dims = modality.dimensions();
    let mut found: BTreeMap<&str, &Value> = BTreeMap::new();
    for (k, v) in &obj.0 {
        let key = normalize_key(k);
        if let Some(d) = dims.iter().find(|d| **d == key) {
            if found.insert(d, v).is_some() {
                return Err(ParseError::DuplicateKey(key));
            }
        }
    }
    let mut scores = BTreeMap::new();
    let mut rationales = BTreeMap::new();
    for d in dims {
        let v = found.get(d).ok_or_else(|| ParseError::MissingDimension(d.to_string()))?;
        let bad = |message: &str| ParseError::BadScore {
            dimension: d.to_string(),
            message: message.to_string(),
        };
        let (score, rationale) = match v {
            Value::Object(m) => (
                m.get("score").ok_or_else(|| bad("no score field"))?,
                m.get("rationale").and_then(Value::as_str),
            ),
            other => (*other, None),
        };
        let score = strict_int(score).ok_or_else(|| bad(&format!("score {score} is not an integer")))?;
        if !(1..=5).contains(&score) {
            return Err(bad(&format!("score {score} outside 1..5")));
        }
        scores.insert(d.to_string(), score as u8);
        if let Some(r) = rationale {
            rationales.insert(d.to_string(), r.to_string());
        }
    }
    Ok(SubjectiveScoreSet {
        modality,
        scores,
        rationales,
    })
}

/// Verdicts keyed by checkpoint id; reply keys must equal the checklist texts.
pub fn parse_objective_response(raw: &str, checklist: &[Checkpoint]) -> Result<ObjectiveResult, ParseError> {
    let Some(first) = checklist.first() else {
        return Err(ParseError::EmptyChecklist);
    };
    let modality = first.modality;
    let mut by_text: BTreeMap<String, &Checkpoint> = BTreeMap::new();
    for c in checklist {
        let key = normalize_key(&c.text);
        if by_text.insert(key.clone(), c).is_some() {
            return Err(ParseError::AmbiguousChecklist(key));
        }
    }
    let obj = extract_single_object(raw)?;
    let mut seen = BTreeSet::new();
    let mut unexpected = Vec::new();
    let mut verdicts = BTreeMap::new();
    for (k, v) in &obj.0 {
        let key = normalize_key(k);
        if !seen.insert(key.clone()) {
            return Err(ParseError::DuplicateKey(key));
        }
        let Some(c) = by_text.get(&key) else {
            unexpected.push(k.clone());
            continue;
        };
        let verdict = match strict_int(v) {
            Some(0) => false,
            Some(1) => true,
            _ => {
                return Err(ParseError::Value {
                    key: k.clone(),
                    value: v.to_string(),
                })
            }
        };
        verdicts.insert(c.id.clone(), verdict);
    }
    let missing: Vec<String> = checklist
        .iter()
        .filter(|c| !verdicts.contains_key(&c.id))
        .map(|c| c.text.clone())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(ParseError::StrictKey { missing, unexpected });
    }
    Ok(ObjectiveResult::new(modality, verdicts))
}

pub fn parse_safety_response(raw: &str, modality: Modality) -> Result<SafetyVerdict, ParseError> {
    let obj = extract_single_object(raw)?;
    let mut fields: BTreeMap<&str, &Value> = BTreeMap::new();
    for (k, v) in &obj.0 {
        if fields.insert(k.as_str(), v).is_some() {
            return Err(ParseError::DuplicateKey(k.clone()));
        }
    }
    let flagged = fields
        .get("flagged")
        .and_then(|v| v.as_bool())
        .ok_or_else(|| ParseError::Safety("\"flagged\" must be true or false".into()))?;
    let categories = match fields.get("categories") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|c| c.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ParseError::Safety("categories must be strings".into()))?,
        Some(_) => return Err(ParseError::Safety("categories must be a list".into())),
    };
    if !flagged && !categories.is_empty() {
        return Err(ParseError::Safety("categories given for an unflagged payload".into()));
    }
    let detail = fields.get("detail").and_then(|v| v.as_str()).unwrap_or_default().to_string();
    Ok(SafetyVerdict {
        modality,
        flagged,
        categories,
        detail,
    })
}
