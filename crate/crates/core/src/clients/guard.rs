use std::future::Future;
use std::sync::Arc;

use async_trait::async_trait;
use tokio::sync::Semaphore;

use super::{
    ChatClient, ChatRequest, ClientError, EmbedInput, EmbedModality, Embedder, Hyperparams, Limits, T2IBackend,
};
use crate::image::ImageData;

/// Shared limiter: one semaphore plus the retry policy.
#[derive(Clone)]
struct Gate {
    limits: Limits,
    permits: Arc<Semaphore>,
}

impl Gate {
    fn new(limits: Limits) -> Self {
        Self {
            permits: Arc::new(Semaphore::new(limits.max_in_flight.max(1))),
            limits,
        }
    }

    async fn run<T, F, Fut>(&self, mut call: F) -> Result<T, ClientError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, ClientError>>,
    {
        let attempts = self.limits.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                match tokio::time::timeout(self.limits.timeout(), call()).await {
                    Ok(r) => r,
                    Err(_) => Err(ClientError::transport(format!(
                        "timed out after {}s",
                        self.limits.timeout_secs
                    ))),
                }
            };
            match result {
                Err(ClientError::Transport { message, .. }) if attempt >= attempts => {
                    return Err(ClientError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) if e.is_retryable() => {
                    tracing::debug!(attempt, error = %e, "retrying");
                    tokio::time::sleep(self.limits.backoff(attempt)).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub struct GuardedChat {
    inner: Arc<dyn ChatClient>,
    hyperparams: Hyperparams,
    gate: Gate,
}

impl GuardedChat {
    pub fn new(inner: Arc<dyn ChatClient>, limits: Limits) -> Self {
        Self {
            hyperparams: inner.hyperparams(),
            inner,
            gate: Gate::new(limits),
        }
    }

    pub fn limits(&self) -> Limits {
        self.gate.limits
    }
}

#[async_trait]
impl ChatClient for GuardedChat {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn hyperparams(&self) -> Hyperparams {
        self.hyperparams
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let estimated = request.estimate_tokens();
        let cap = u64::from(self.hyperparams.context_cap);
        if estimated > cap {
            return Err(ClientError::ContextOverflow { estimated, cap });
        }
        self.gate.run(|| self.inner.complete(request)).await
    }
}

pub struct GuardedEmbedder {
    inner: Arc<dyn Embedder>,
    gate: Gate,
}

impl GuardedEmbedder {
    pub fn new(inner: Arc<dyn Embedder>, limits: Limits) -> Self {
        Self {
            inner,
            gate: Gate::new(limits),
        }
    }
}

#[async_trait]
impl Embedder for GuardedEmbedder {
    fn embedder_id(&self) -> &str {
        self.inner.embedder_id()
    }

    fn modality(&self) -> EmbedModality {
        self.inner.modality()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    async fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, ClientError> {
        self.gate.run(|| self.inner.embed_raw(input)).await
    }
}

pub struct GuardedT2I {
    inner: Arc<dyn T2IBackend>,
    gate: Gate,
}

impl GuardedT2I {
    pub fn new(inner: Arc<dyn T2IBackend>, limits: Limits) -> Self {
        Self {
            inner,
            gate: Gate::new(limits),
        }
    }
}

#[async_trait]
impl T2IBackend for GuardedT2I {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn image_size(&self) -> (u32, u32) {
        self.inner.image_size()
    }

    async fn generate_raw(&self, prompt: &str, n: usize) -> Result<Vec<ImageData>, ClientError> {
        self.gate.run(|| self.inner.generate_raw(prompt, n)).await
    }
}
