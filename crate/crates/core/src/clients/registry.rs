use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mock::{MockChat, MockEmbedder, MockT2I};
use super::openai::{OpenAiChat, OpenAiEmbedder, OpenAiImages};
use super::{ChatClient, EmbedModality, Embedder, GuardedChat, GuardedEmbedder, GuardedT2I, Hyperparams, Limits, T2IBackend};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry: {0}")]
    Malformed(String),
    #[error("duplicate model id {0:?}")]
    DuplicateId(String),
    #[error("model {id:?}: unknown provider {provider:?} (expected \"mock\" or \"openai\")")]
    UnknownProvider { id: String, provider: String },
    #[error("model {id:?}: environment variable {var} is not set")]
    MissingSecret { id: String, var: String },
    #[error("model {id:?}: {message}")]
    Invalid { id: String, message: String },
    #[error("no {kind} model with id {id:?}")]
    NotFound { kind: &'static str, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Chat,
    Embed,
    T2i,
}

/// One `[[models]]` entry of the registry file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub kind: ModelKind,
    pub provider: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub secret_env: Option<String>,
    /// Added to the registry seed for mock providers.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub hyperparams: Option<Hyperparams>,
    #[serde(default)]
    pub limits: Option<Limits>,
    /// Embedders only.
    #[serde(default)]
    pub modality: Option<EmbedModality>,
    #[serde(default)]
    pub dimension: Option<usize>,
    /// Mock chat: payload term → safety category.
    #[serde(default)]
    pub flag_terms: BTreeMap<String, String>,
    /// Mock chat and mock t2i: terms that trigger a refusal.
    #[serde(default)]
    pub refuse_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
}

/// Named, guarded clients built from a [`RegistryConfig`].
pub struct ModelRegistry {
    pub config: RegistryConfig,
    chat: BTreeMap<String, Arc<GuardedChat>>,
    embed: BTreeMap<String, Arc<GuardedEmbedder>>,
    t2i: BTreeMap<String, Arc<GuardedT2I>>,
}

impl std::fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelRegistry")
            .field("chat", &self.chat.keys().collect::<Vec<_>>())
            .field("embed", &self.embed.keys().collect::<Vec<_>>())
            .field("t2i", &self.t2i.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ModelRegistry {
    pub fn len(&self) -> usize {
        self.chat.len() + self.embed.len() + self.t2i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn chat(&self, id: &str) -> Result<Arc<dyn ChatClient>, RegistryError> {
        self.chat
            .get(id)
            .map(|c| c.clone() as Arc<dyn ChatClient>)
            .ok_or_else(|| not_found("chat", id))
    }

    pub fn embedder(&self, id: &str) -> Result<Arc<dyn Embedder>, RegistryError> {
        self.embed
            .get(id)
            .map(|c| c.clone() as Arc<dyn Embedder>)
            .ok_or_else(|| not_found("embed", id))
    }

    pub fn t2i(&self, id: &str) -> Result<Arc<dyn T2IBackend>, RegistryError> {
        self.t2i
            .get(id)
            .map(|c| c.clone() as Arc<dyn T2IBackend>)
            .ok_or_else(|| not_found("t2i", id))
    }

    pub fn entry(&self, id: &str) -> Option<&ModelEntry> {
        self.config.models.iter().find(|e| e.id == id)
    }

    pub fn ids(&self, kind: ModelKind) -> Vec<String> {
        match kind {
            ModelKind::Chat => self.chat.keys().cloned().collect(),
            ModelKind::Embed => self.embed.keys().cloned().collect(),
            ModelKind::T2i => self.t2i.keys().cloned().collect(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        load_model_registry(&text, |var| std::env::var(var).ok())
    }
}

fn not_found(kind: &'static str, id: &str) -> RegistryError {
    RegistryError::NotFound {
        kind,
        id: id.to_string(),
    }
}

/// Parses a TOML registry; secrets come only from `env`.
pub fn load_model_registry(source: &str, env: impl Fn(&str) -> Option<String>) -> Result<ModelRegistry, RegistryError> {
    let config: RegistryConfig = toml::from_str(source).map_err(|e| RegistryError::Malformed(e.to_string()))?;
    let mut registry = ModelRegistry {
        config: config.clone(),
        chat: BTreeMap::new(),
        embed: BTreeMap::new(),
        t2i: BTreeMap::new(),
    };
    let mut seen = std::collections::BTreeSet::new();
    for entry in &config.models {
        if !seen.insert(entry.id.as_str()) {
            return Err(RegistryError::DuplicateId(entry.id.clone()));
        }
        let secret = match &entry.secret_env {
            Some(var) => Some(env(var).ok_or_else(|| RegistryError::MissingSecret {
                id: entry.id.clone(),
                var: var.clone(),
            })?),
            None => None,
        };
        let limits = entry.limits.unwrap_or_default();
        let hyperparams = entry.hyperparams.unwrap_or_default();
        let seed = config.seed.wrapping_add(entry.seed.unwrap_or(0));
        let invalid = |message: &str| RegistryError::Invalid {
            id: entry.id.clone(),
            message: message.to_string(),
        };
        match entry.provider.as_str() {
            "mock" | "openai" => {}
            other => {
                return Err(RegistryError::UnknownProvider {
                    id: entry.id.clone(),
                    provider: other.to_string(),
                })
            }
        }
        let mock = entry.provider == "mock";
        let endpoint = || entry.endpoint.as_deref().ok_or_else(|| invalid("endpoint is required"));
        let model = entry.model.clone().unwrap_or_else(|| entry.id.clone());
        match entry.kind {
            ModelKind::Chat => {
                let inner: Arc<dyn ChatClient> = if mock {
                    let mut m = MockChat::new(model, seed).with_hyperparams(hyperparams);
                    for (term, cat) in &entry.flag_terms {
                        m = m.flag(term.clone(), cat.clone());
                    }
                    for term in &entry.refuse_terms {
                        m = m.refuse(term.clone());
                    }
                    Arc::new(m)
                } else {
                    Arc::new(OpenAiChat::new(endpoint()?, model, secret, hyperparams))
                };
                registry.chat.insert(entry.id.clone(), Arc::new(GuardedChat::new(inner, limits)));
            }
            ModelKind::Embed => {
                let modality = entry.modality.ok_or_else(|| invalid("embedders need a modality"))?;
                let dimension = entry.dimension.filter(|d| *d > 0).ok_or_else(|| invalid("embedders need a positive dimension"))?;
                let inner: Arc<dyn Embedder> = if mock {
                    Arc::new(MockEmbedder::new(entry.id.clone(), modality, dimension, seed))
                } else {
                    Arc::new(OpenAiEmbedder::new(entry.id.clone(), endpoint()?, model, secret, modality, dimension))
                };
                registry.embed.insert(entry.id.clone(), Arc::new(GuardedEmbedder::new(inner, limits)));
            }
            ModelKind::T2i => {
                let inner: Arc<dyn T2IBackend> = if mock {
                    let mut b = MockT2I::new(entry.id.clone(), seed);
                    for term in &entry.refuse_terms {
                        b = b.refuse(term.clone());
                    }
                    Arc::new(b)
                } else {
                    Arc::new(OpenAiImages::new(entry.id.clone(), endpoint()?, model, secret))
                };
                registry.t2i.insert(entry.id.clone(), Arc::new(GuardedT2I::new(inner, limits)));
            }
        }
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR: &str = r#"
seed = 7

[[models]]
id = "judge"
kind = "chat"
provider = "mock"
flag_terms = { "knife fight" = "violence" }

[[models]]
id = "prompter"
kind = "chat"
provider = "openai"
endpoint = "http://127.0.0.1:9"
model = "some-model"
secret_env = "ATELIER_TEST_KEY"
hyperparams = { temperature = 0.3 }

[[models]]
id = "text-embed"
kind = "embed"
provider = "mock"
modality = "text"
dimension = 512

[[models]]
id = "t2i"
kind = "t2i"
provider = "mock"
"#;

    fn env_with_key(var: &str) -> Option<String> {
        (var == "ATELIER_TEST_KEY").then(|| "secret".to_string())
    }

    #[test]
    fn four_entries() {
        let r = load_model_registry(FOUR, env_with_key).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r.embedder("text-embed").unwrap().dimension(), 512);
        let p = r.chat("prompter").unwrap().hyperparams();
        assert_eq!((p.temperature, p.top_p), (0.3, 0.7));
        assert!(r.t2i("missing").is_err());
    }

    #[test]
    fn unset_secret_is_a_startup_error() {
        let err = load_model_registry(FOUR, |_| None).unwrap_err();
        assert!(matches!(&err, RegistryError::MissingSecret { var, .. } if var == "ATELIER_TEST_KEY"));
        assert!(err.to_string().contains("ATELIER_TEST_KEY"));
    }

    #[test]
    fn duplicate_ids_and_unknown_providers_rejected() {
        let dup = "[[models]]\nid='a'\nkind='chat'\nprovider='mock'\n[[models]]\nid='a'\nkind='t2i'\nprovider='mock'\n";
        assert!(matches!(load_model_registry(dup, |_| None), Err(RegistryError::DuplicateId(_))));
        let unknown = "[[models]]\nid='a'\nkind='chat'\nprovider='local-diffusion'\n";
        assert!(matches!(
            load_model_registry(unknown, |_| None),
            Err(RegistryError::UnknownProvider { .. })
        ));
    }
}
