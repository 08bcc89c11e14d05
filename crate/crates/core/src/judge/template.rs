//! Editable prompt templates with `<<NAME>>` placeholders.
//!
//! A template file is split into sections by `=== system ===`,
//! `=== exemplar ===` and `=== query ===` header lines. The exemplar section
//! is repeated once per exemplar; inside it `<<i>>` is the 1-based index and
//! `EXEMPLAR_i_` prefixes are rewritten to `EXEMPLAR_<index>_`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::clients::{ChatRequest, ContentPart};
use crate::image::ImageData;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: no value for placeholder <<{name}>>")]
    Unresolved { template: String, name: String },
    #[error("template {template}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template {template}: {message}")]
    Malformed { template: String, message: String },
    #[error("no template named {0:?}")]
    Missing(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

/// Value bound to a placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Text(String),
    Parts(Vec<ContentPart>),
}

impl Slot {
    pub fn image(image: ImageData) -> Self {
        Slot::Parts(vec![ContentPart::Image(image)])
    }
}

impl From<String> for Slot {
    fn from(s: String) -> Self {
        Slot::Text(s)
    }
}

impl From<&str> for Slot {
    fn from(s: &str) -> Self {
        Slot::Text(s.to_string())
    }
}

pub type Slots = BTreeMap<String, Slot>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub system: Option<String>,
    pub exemplar: Option<String>,
    pub query: String,
}

impl Template {
    pub fn parse(name: &str, source: &str) -> Result<Self, TemplateError> {
        let malformed = |message: String| TemplateError::Malformed {
            template: name.to_string(),
            message,
        };
        let mut sections: BTreeMap<&str, String> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in source.split_inclusive('\n') {
            let header = line
                .trim()
                .strip_prefix("=== ")
                .and_then(|l| l.strip_suffix(" ==="));
            if let Some(h) = header {
                let key = match h {
                    "system" => "system",
                    "exemplar" => "exemplar",
                    "query" => "query",
                    other => return Err(malformed(format!("unknown section {other:?}"))),
                };
                if sections.insert(key, String::new()).is_some() {
                    return Err(malformed(format!("section {key} appears twice")));
                }
                current = Some(key);
                continue;
            }
            match current {
                Some(key) => sections.get_mut(key).unwrap().push_str(line),
                None if line.trim().is_empty() => {}
                None => return Err(malformed("text before the first section header".into())),
            }
        }
        let query = sections
            .remove("query")
            .ok_or_else(|| malformed("missing query section".into()))?;
        Ok(Self {
            name: name.to_string(),
            system: sections.remove("system").map(|s| s.trim_end().to_string()),
            exemplar: sections.remove("exemplar"),
            query: query.trim_end().to_string(),
        })
    }

    /// Builds a single-turn request. Each entry of `exemplars` holds the
    /// per-exemplar slots, keyed without the `EXEMPLAR_i_` prefix.
    pub fn render(&self, common: &Slots, exemplars: &[Slots], query: &Slots) -> Result<ChatRequest, TemplateError> {
        let system = match &self.system {
            Some(text) => {
                let parts = fill(&self.name, text, common)?;
                Some(flatten_text(&self.name, parts)?)
            }
            None => None,
        };
        let mut content = Vec::new();
        if !exemplars.is_empty() {
            let block = self.exemplar.as_ref().ok_or_else(|| TemplateError::Malformed {
                template: self.name.clone(),
                message: "template has no exemplar section".into(),
            })?;
            for (i, own) in exemplars.iter().enumerate() {
                let n = i + 1;
                let text = block.replace("<<i>>", &n.to_string()).replace("<<EXEMPLAR_i_", &format!("<<EXEMPLAR_{n}_"));
                let mut slots = common.clone();
                for (k, v) in own {
                    slots.insert(format!("EXEMPLAR_{n}_{k}"), v.clone());
                }
                content.extend(fill(&self.name, &text, &slots)?);
            }
        }
        let mut slots = common.clone();
        slots.extend(query.iter().map(|(k, v)| (k.clone(), v.clone())));
        content.extend(fill(&self.name, &self.query, &slots)?);
        Ok(ChatRequest::single(system, merge_text(content)))
    }
}

fn flatten_text(template: &str, parts: Vec<ContentPart>) -> Result<String, TemplateError> {
    let mut out = String::new();
    for p in parts {
        match p {
            ContentPart::Text(t) => out.push_str(&t),
            ContentPart::Image(_) => {
                return Err(TemplateError::Malformed {
                    template: template.to_string(),
                    message: "images cannot be placed in the system section".into(),
                })
            }
        }
    }
    Ok(out)
}

fn fill(template: &str, text: &str, slots: &Slots) -> Result<Vec<ContentPart>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find("<<") {
        out.push(ContentPart::Text(rest[..start].to_string()));
        let after = &rest[start + 2..];
        let end = after.find(">>").ok_or(TemplateError::Unterminated {
            template: template.to_string(),
            offset: offset + start,
        })?;
        let name = &after[..end];
        match slots.get(name) {
            Some(Slot::Text(t)) => out.push(ContentPart::Text(t.clone())),
            Some(Slot::Parts(p)) => out.extend(p.iter().cloned()),
            None => {
                return Err(TemplateError::Unresolved {
                    template: template.to_string(),
                    name: name.to_string(),
                })
            }
        }
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push(ContentPart::Text(rest.to_string()));
    Ok(out)
}

fn merge_text(parts: Vec<ContentPart>) -> Vec<ContentPart> {
    let mut out: Vec<ContentPart> = Vec::with_capacity(parts.len());
    for p in parts {
        match (out.last_mut(), p) {
            (_, ContentPart::Text(t)) if t.is_empty() => {}
            (Some(ContentPart::Text(prev)), ContentPart::Text(t)) => prev.push_str(&t),
            (_, p) => out.push(p),
        }
    }
    out
}

const BUILTIN: &[(&str, &str)] = &[
    ("prompt_subjective", include_str!("../../templates/prompt_subjective.tmpl")),
    ("image_subjective", include_str!("../../templates/image_subjective.tmpl")),
    ("prompt_objective", include_str!("../../templates/prompt_objective.tmpl")),
    ("image_objective", include_str!("../../templates/image_objective.tmpl")),
    ("prompt_safety", include_str!("../../templates/prompt_safety.tmpl")),
    ("image_safety", include_str!("../../templates/image_safety.tmpl")),
    ("prompter_novice_text", include_str!("../../templates/prompter_novice_text.tmpl")),
    ("prompter_novice_image", include_str!("../../templates/prompter_novice_image.tmpl")),
    ("prompter_skilled_oe", include_str!("../../templates/prompter_skilled_oe.tmpl")),
    ("prompter_skilled_co", include_str!("../../templates/prompter_skilled_co.tmpl")),
    ("prompter_skilled_im", include_str!("../../templates/prompter_skilled_im.tmpl")),
];

const PROMPT_GUIDELINES: &str = include_str!("../../templates/prompt_guidelines.txt");
const IMAGE_GUIDELINES: &str = include_str!("../../templates/image_guidelines.txt");

/// All judge and prompter templates plus the two scoring rubrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
    pub prompt_guidelines: String,
    pub image_guidelines: String,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, src)| (name.to_string(), Template::parse(name, src).expect("builtin template")))
            .collect();
        Self {
            templates,
            prompt_guidelines: PROMPT_GUIDELINES.trim_end().to_string(),
            image_guidelines: IMAGE_GUIDELINES.trim_end().to_string(),
        }
    }

    /// Built-in set with any `<name>.tmpl` or guideline file found in `dir`
    /// taking precedence.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.tmpl"));
            if path.exists() {
                set.templates.insert(name.to_string(), Template::parse(name, &read(&path)?)?);
            }
        }
        for (file, target) in [
            ("prompt_guidelines.txt", &mut set.prompt_guidelines),
            ("image_guidelines.txt", &mut set.image_guidelines),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *target = read(&path)?.trim_end().to_string();
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&Template, TemplateError> {
        self.templates.get(name).ok_or_else(|| TemplateError::Missing(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
