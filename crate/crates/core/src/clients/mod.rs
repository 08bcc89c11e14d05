//! Adapters for chat models, embedders and text-to-image backends.
//!
//! Every adapter is a shareable handle. [`GuardedChat`] adds the pre-flight
//! size check, the in-flight limit, the request timeout and retries with
//! exponential backoff on top of any [`ChatClient`].

mod guard;
pub mod mock;
pub mod openai;
mod registry;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageData;

pub use guard::{GuardedChat, GuardedEmbedder, GuardedT2I};
pub use registry::{load_model_registry, ModelEntry, ModelKind, ModelRegistry, RegistryConfig, RegistryError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider refused the request: {0}")]
    Refusal(String),
    #[error("request needs about {estimated} tokens, context cap is {cap}")]
    ContextOverflow { estimated: u64, cap: u64 },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn transport(message: impl Into<String>) -> Self {
        ClientError::Transport {
            attempts: 1,
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transport { .. })
    }
}

/// Decoding hyperparameters shared by prompters and judges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub context_cap: u32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 0.7,
            max_output_tokens: 4096,
            context_cap: 16384,
        }
    }
}

/// Backpressure and retry settings for one client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_in_flight: usize,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            timeout_secs: 120.0,
            max_attempts: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl Limits {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Image(ImageData),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn user(content: Vec<ContentPart>) -> Self {
        Self {
            role: Role::User,
            content,
        }
    }

    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect()
    }
}

/// A rendered multimodal chat request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub messages: Vec<Message>,
}

/// Rough token cost charged per attached image in the pre-flight check.
pub const IMAGE_TOKEN_ESTIMATE: u64 = 1024;

impl ChatRequest {
    pub fn single(system: Option<String>, content: Vec<ContentPart>) -> Self {
        Self {
            system,
            messages: vec![Message::user(content)],
        }
    }

    /// All text in the request, system text first.
    pub fn all_text(&self) -> String {
        let mut out = self.system.clone().unwrap_or_default();
        for m in &self.messages {
            out.push_str(&m.text());
        }
        out
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageData> {
        self.messages.iter().flat_map(|m| m.content.iter()).filter_map(|p| match p {
            ContentPart::Image(img) => Some(img),
            ContentPart::Text(_) => None,
        })
    }

    /// Four characters per token plus a flat charge per image.
    pub fn estimate_tokens(&self) -> u64 {
        let chars = self.all_text().chars().count() as u64;
        chars.div_ceil(4) + IMAGE_TOKEN_ESTIMATE * self.images().count() as u64
    }
}

#[async_trait]
pub trait ChatClient: Send + Sync {
    fn model_id(&self) -> &str;

    fn hyperparams(&self) -> Hyperparams {
        Hyperparams::default()
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedModality {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    Image(&'a ImageData),
}

impl EmbedInput<'_> {
    pub fn modality(&self) -> EmbedModality {
        match self {
            EmbedInput::Text(_) => EmbedModality::Text,
            EmbedInput::Image(_) => EmbedModality::Image,
        }
    }
}

/// A vector stamped with the embedder that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub embedder_id: String,
    pub vector: Vec<f32>,
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn embedder_id(&self) -> &str;
    fn modality(&self) -> EmbedModality;
    fn dimension(&self) -> usize;

    /// Raw provider call; prefer [`embed`], which checks the contract.
    async fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, ClientError>;
}

/// Embeds `input`, enforcing the modality and dimension contract.
pub async fn embed(embedder: &dyn Embedder, input: EmbedInput<'_>) -> Result<Embedding, ClientError> {
    if input.modality() != embedder.modality() {
        return Err(ClientError::Schema(format!(
            "{:?} payload sent to {:?} embedder {}",
            input.modality(),
            embedder.modality(),
            embedder.embedder_id()
        )));
    }
    let vector = embedder.embed_raw(input).await?;
    if vector.len() != embedder.dimension() {
        return Err(ClientError::Protocol(format!(
            "embedder {} returned {} dimensions, expected {}",
            embedder.embedder_id(),
            vector.len(),
            embedder.dimension()
        )));
    }
    Ok(Embedding {
        embedder_id: embedder.embedder_id().to_string(),
        vector,
    })
}

pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (1024, 1024);

#[async_trait]
pub trait T2IBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn image_size(&self) -> (u32, u32) {
        DEFAULT_IMAGE_SIZE
    }

    async fn generate_raw(&self, prompt: &str, n: usize) -> Result<Vec<ImageData>, ClientError>;
}

/// Generates exactly `n` images or fails; partial lists are never returned.
pub async fn generate_images(backend: &dyn T2IBackend, prompt: &str, n: usize) -> Result<Vec<ImageData>, ClientError> {
    if n == 0 {
        return Err(ClientError::Precondition("image count must be at least 1".into()));
    }
    if prompt.trim().is_empty() {
        return Err(ClientError::Precondition("prompt is empty".into()));
    }
    let images = backend.generate_raw(prompt, n).await?;
    if images.len() != n {
        return Err(ClientError::Protocol(format!(
            "backend {} returned {} images, {} requested",
            backend.backend_id(),
            images.len(),
            n
        )));
    }
    Ok(images)
}
