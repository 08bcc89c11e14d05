//! Generic adapters for OpenAI-compatible HTTP APIs.

use async_trait::async_trait;
use base64::Engine;
use serde_json::{json, Value};

use super::{
    ChatClient, ChatRequest, ClientError, ContentPart, EmbedInput, EmbedModality, Embedder, Hyperparams, Role,
    T2IBackend, DEFAULT_IMAGE_SIZE,
};
use crate::image::ImageData;

#[derive(Clone)]
struct Http {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl Http {
    fn new(endpoint: &str, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
        }
    }

    async fn post(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        let mut req = self.client.post(format!("{}/{path}", self.endpoint)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| ClientError::transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ClientError::transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(ClientError::transport(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            if text.contains("content_policy") || text.contains("content_filter") || text.contains("safety") {
                return Err(ClientError::Refusal(text));
            }
            return Err(ClientError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Protocol(format!("invalid JSON body: {e}")))
    }
}

/// Chat-completions adapter.
pub struct OpenAiChat {
    http: Http,
    model: String,
    hyperparams: Hyperparams,
}

impl OpenAiChat {
    pub fn new(endpoint: &str, model: impl Into<String>, api_key: Option<String>, hyperparams: Hyperparams) -> Self {
        Self {
            http: Http::new(endpoint, api_key),
            model: model.into(),
            hyperparams,
        }
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        for m in &request.messages {
            let parts: Vec<Value> = m
                .content
                .iter()
                .map(|p| match p {
                    ContentPart::Text(t) => json!({"type": "text", "text": t}),
                    ContentPart::Image(img) => json!({"type": "image_url", "image_url": {"url": img.data_url()}}),
                })
                .collect();
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": parts}));
        }
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.hyperparams.temperature,
            "top_p": self.hyperparams.top_p,
            "max_tokens": self.hyperparams.max_output_tokens,
        })
    }
}

#[async_trait]
impl ChatClient for OpenAiChat {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn hyperparams(&self) -> Hyperparams {
        self.hyperparams
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let resp = self.http.post("chat/completions", &self.body(request)).await?;
        let choice = &resp["choices"][0];
        if let Some(refusal) = choice["message"]["refusal"].as_str() {
            return Err(ClientError::Refusal(refusal.to_string()));
        }
        if choice["finish_reason"] == "content_filter" {
            return Err(ClientError::Refusal("content filter".into()));
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Protocol("reply has no message content".into()))
    }
}

/// Embeddings adapter; images are sent as data URLs in `input`.
pub struct OpenAiEmbedder {
    http: Http,
    model: String,
    id: String,
    modality: EmbedModality,
    dimension: usize,
}

impl OpenAiEmbedder {
    pub fn new(
        id: impl Into<String>,
        endpoint: &str,
        model: impl Into<String>,
        api_key: Option<String>,
        modality: EmbedModality,
        dimension: usize,
    ) -> Self {
        Self {
            http: Http::new(endpoint, api_key),
            model: model.into(),
            id: id.into(),
            modality,
            dimension,
        }
    }
}

#[async_trait]
impl Embedder for OpenAiEmbedder {
    fn embedder_id(&self) -> &str {
        &self.id
    }

    fn modality(&self) -> EmbedModality {
        self.modality
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, ClientError> {
        let payload = match input {
            EmbedInput::Text(t) => t.to_string(),
            EmbedInput::Image(img) => img.data_url(),
        };
        let resp = self
            .http
            .post(
                "embeddings",
                &json!({"model": self.model, "input": payload, "dimensions": self.dimension}),
            )
            .await?;
        resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ClientError::Protocol("reply has no embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| ClientError::Protocol("non-numeric embedding entry".into()))
            })
            .collect()
    }
}

/// Image-generation adapter requesting base64 payloads.
pub struct OpenAiImages {
    http: Http,
    id: String,
    model: String,
    size: (u32, u32),
}

impl OpenAiImages {
    pub fn new(id: impl Into<String>, endpoint: &str, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            http: Http::new(endpoint, api_key),
            id: id.into(),
            model: model.into(),
            size: DEFAULT_IMAGE_SIZE,
        }
    }

    pub fn with_size(mut self, size: (u32, u32)) -> Self {
        self.size = size;
        self
    }
}

#[async_trait]
impl T2IBackend for OpenAiImages {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn image_size(&self) -> (u32, u32) {
        self.size
    }

    async fn generate_raw(&self, prompt: &str, n: usize) -> Result<Vec<ImageData>, ClientError> {
        let body = json!({
            "model": self.model,
            "prompt": prompt,
            "n": n,
            "size": format!("{}x{}", self.size.0, self.size.1),
            "response_format": "b64_json",
        });
        let resp = self.http.post("images/generations", &body).await?;
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| ClientError::Protocol("reply has no data array".into()))?;
        data.iter()
            .map(|d| {
                let b64 = d["b64_json"]
                    .as_str()
                    .ok_or_else(|| ClientError::Protocol("image entry without b64_json".into()))?;
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| ClientError::Protocol(format!("bad base64 image: {e}")))?;
                Ok(ImageData::from_bytes(bytes))
            })
            .collect()
    }
}
