//! Deterministic stand-ins for chat models, embedders and image backends.
//!
//! Every output is a pure function of the request and a seed, so repeated
//! runs are bit-identical.

use std::collections::BTreeMap;
use std::sync::Mutex;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{ChatClient, ChatRequest, ClientError, EmbedInput, EmbedModality, Embedder, Hyperparams, T2IBackend};
use crate::image::{ImageData, IMAGE_DIMENSIONS, PROMPT_DIMENSIONS};

/// Line that introduces the checklist in objective judge requests.
pub const CHECKLIST_MARKER: &str = "Checklist (evaluate each item one by one):";

fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Text found in `# ...` header comments of a PPM image.
pub fn ppm_comments(image: &ImageData) -> Vec<String> {
    let Some(rest) = image.bytes.strip_prefix(b"P6") else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for line in rest.split(|b| *b == b'\n').skip(1) {
        match line.strip_prefix(b"#") {
            Some(c) => out.push(String::from_utf8_lossy(c).trim().to_string()),
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Objective,
    PromptSubjective,
    ImageSubjective,
    Safety,
    Prompter,
}

fn classify(request: &ChatRequest) -> Role {
    let system = request.system.as_deref().unwrap_or("");
    let text = request.all_text();
    if system.contains("checklist evaluator") || text.contains(CHECKLIST_MARKER) {
        Role::Objective
    } else if system.contains("content safety") {
        Role::Safety
    } else if system.contains("Art Director") {
        Role::ImageSubjective
    } else if system.contains("Prompt Engineer and Evaluator") {
        Role::PromptSubjective
    } else {
        Role::Prompter
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.rfind(start)? + start.len();
    let rest = &text[from..];
    Some(rest.find(end).map_or(rest, |i| &rest[..i]).trim())
}

/// Mock chat model that plays judge, safety filter or prompter depending on
/// the request it receives.
pub struct MockChat {
    model_id: String,
    seed: u64,
    hyperparams: Hyperparams,
    flag_terms: BTreeMap<String, String>,
    refuse_terms: Vec<String>,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockChat {
    pub fn new(model_id: impl Into<String>, seed: u64) -> Self {
        Self {
            model_id: model_id.into(),
            seed,
            hyperparams: Hyperparams::default(),
            flag_terms: BTreeMap::new(),
            refuse_terms: Vec::new(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_hyperparams(mut self, hyperparams: Hyperparams) -> Self {
        self.hyperparams = hyperparams;
        self
    }

    /// Payloads containing `term` are flagged under `category`.
    pub fn flag(mut self, term: impl Into<String>, category: impl Into<String>) -> Self {
        self.flag_terms.insert(term.into().to_lowercase(), category.into());
        self
    }

    /// Prompter requests containing `term` are refused.
    pub fn refuse(mut self, term: impl Into<String>) -> Self {
        self.refuse_terms.push(term.into().to_lowercase());
        self
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_requests(&self) {
        self.log.lock().unwrap().clear();
    }

    fn payload_digest(&self, request: &ChatRequest, use_image: bool, text_start: &str, text_end: &str) -> Vec<u8> {
        if let Some(img) = request.images().last().filter(|_| use_image) {
            return img.bytes.clone();
        }
        let text = request.messages.last().map(|m| m.text()).unwrap_or_default();
        between(&text, text_start, text_end).unwrap_or(&text).as_bytes().to_vec()
    }

    fn objective(&self, request: &ChatRequest) -> String {
        let text = request.messages.last().map(|m| m.text()).unwrap_or_default();
        let visual = request.system.as_deref().unwrap_or("").contains("visual");
        let digest = self.payload_digest(request, visual, "Prompt:", CHECKLIST_MARKER);
        let mut obj = Map::new();
        if let Some(i) = text.find(CHECKLIST_MARKER) {
            let items = text[i + CHECKLIST_MARKER.len()..]
                .lines()
                .skip_while(|l| l.trim().is_empty())
                .map_while(|l| l.trim_start().strip_prefix("- "));
            for item in items {
                let h = hash64(&[&self.seed.to_le_bytes(), &digest, item.as_bytes()]);
                obj.insert(item.to_string(), json!(u8::from(h % 100 < 70)));
            }
        }
        Value::Object(obj).to_string()
    }

    fn subjective(&self, request: &ChatRequest, dims: &[&str; 4]) -> String {
        let image = dims == &IMAGE_DIMENSIONS;
        let digest = self.payload_digest(request, image, "Prompt to Evaluate:", "Evaluation Guidelines:");
        let words = String::from_utf8_lossy(&digest).split_whitespace().count() as i64;
        let mut obj = Map::new();
        for dim in dims {
            let h = hash64(&[&self.seed.to_le_bytes(), &digest, dim.as_bytes()]);
            let score = if image {
                1 + (h % 5) as i64
            } else {
                (1 + (words / 12).min(3) + (h % 3) as i64 - 1).clamp(1, 5)
            };
            obj.insert(
                dim.to_string(),
                json!({"score": score, "rationale": format!("{dim} rated {score} by mock judge.")}),
            );
        }
        Value::Object(obj).to_string()
    }

    fn safety(&self, request: &ChatRequest) -> String {
        let mut haystack = request.messages.iter().map(|m| m.text()).collect::<String>();
        for img in request.images() {
            haystack.push_str(&ppm_comments(img).join("\n"));
        }
        let haystack = haystack.to_lowercase();
        let mut categories: Vec<String> = self
            .flag_terms
            .iter()
            .filter(|(term, _)| haystack.contains(term.as_str()))
            .map(|(_, cat)| cat.clone())
            .collect();
        categories.sort();
        categories.dedup();
        let flagged = !categories.is_empty();
        let detail = if flagged { "matched flag terms" } else { "no unsafe content detected" };
        json!({"flagged": flagged, "categories": categories, "detail": detail}).to_string()
    }

    fn prompter(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let text = request.messages.last().map(|m| m.text()).unwrap_or_default();
        let lowered = text.to_lowercase();
        if let Some(term) = self.refuse_terms.iter().find(|t| lowered.contains(t.as_str())) {
            return Err(ClientError::Refusal(format!("request mentions {term:?}")));
        }
        let skilled = request.system.is_some();
        let mut body = match request.images().last() {
            Some(img) => {
                let comments = ppm_comments(img);
                let description = comments
                    .iter()
                    .find_map(|c| c.strip_prefix("description:"))
                    .map(str::trim)
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("a scene matching reference {}", &img.sha256_hex()[..12]));
                description
            }
            None => {
                let task = ["into an image generation prompt:", "Request:"]
                    .iter()
                    .find_map(|m| text.rfind(m).map(|i| &text[i + m.len()..]))
                    .unwrap_or(&text);
                task.split_whitespace().collect::<Vec<_>>().join(" ")
            }
        };
        if body.chars().count() > 600 {
            body = body.chars().take(600).collect();
        }
        Ok(if skilled {
            format!("Highly detailed, carefully composed image. {body}")
        } else {
            format!("An image of: {body}")
        })
    }
}

#[async_trait]
impl ChatClient for MockChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn hyperparams(&self) -> Hyperparams {
        self.hyperparams
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.log.lock().unwrap().push(request.clone());
        match classify(request) {
            Role::Objective => Ok(self.objective(request)),
            Role::PromptSubjective => Ok(self.subjective(request, &PROMPT_DIMENSIONS)),
            Role::ImageSubjective => Ok(self.subjective(request, &IMAGE_DIMENSIONS)),
            Role::Safety => Ok(self.safety(request)),
            Role::Prompter => self.prompter(request),
        }
    }
}

/// Replies from a fixed script, in order; the last entry repeats.
pub struct ScriptedChat {
    model_id: String,
    replies: Vec<Result<String, ClientError>>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(model_id: impl Into<String>, replies: Vec<String>) -> Self {
        Self::with_results(model_id, replies.into_iter().map(Ok).collect())
    }

    pub fn with_results(model_id: impl Into<String>, replies: Vec<Result<String, ClientError>>) -> Self {
        assert!(!replies.is_empty(), "script needs at least one reply");
        Self {
            model_id: model_id.into(),
            replies,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }
}

#[async_trait]
impl ChatClient for ScriptedChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let mut log = self.log.lock().unwrap();
        let i = log.len().min(self.replies.len() - 1);
        log.push(request.clone());
        self.replies[i].clone()
    }
}

/// Feature-hashing text embedder or content-seeded image embedder.
pub struct MockEmbedder {
    id: String,
    modality: EmbedModality,
    dimension: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(id: impl Into<String>, modality: EmbedModality, dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            id: id.into(),
            modality,
            dimension,
            seed,
        }
    }
}

#[async_trait]
impl Embedder for MockEmbedder {
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
        let mut v = vec![0.0f32; self.dimension];
        match input {
            EmbedInput::Text(text) => {
                let lowered = text.to_lowercase();
                let tokens = lowered
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|t| !t.is_empty())
                    .chain(std::iter::once("\u{0}bias"));
                for token in tokens {
                    let h = hash64(&[&self.seed.to_le_bytes(), token.as_bytes()]);
                    let slot = (h % self.dimension as u64) as usize;
                    v[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
                }
                if v.iter().all(|x| *x == 0.0) {
                    v[0] = 1.0;
                }
            }
            EmbedInput::Image(img) => {
                let mut rng = ChaCha8Rng::seed_from_u64(hash64(&[&self.seed.to_le_bytes(), &img.bytes]));
                for x in &mut v {
                    *x = rng.gen_range(-1.0..1.0);
                }
            }
        }
        Ok(v)
    }
}

/// Image backend emitting tiny PPM files whose header records the prompt.
pub struct MockT2I {
    id: String,
    seed: u64,
    refuse_terms: Vec<String>,
}

/// Side length of mock images in pixels.
pub const MOCK_IMAGE_SIDE: usize = 8;

impl MockT2I {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            seed,
            refuse_terms: Vec::new(),
        }
    }

    pub fn refuse(mut self, term: impl Into<String>) -> Self {
        self.refuse_terms.push(term.into().to_lowercase());
        self
    }

    /// Image `index` for `prompt`; a pure function of backend, seed, prompt and index.
    pub fn render(&self, prompt: &str, index: usize) -> ImageData {
        let flat: String = prompt.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut bytes = format!(
            "P6\n# backend: {}\n# index: {index}\n# prompt: {flat}\n{MOCK_IMAGE_SIDE} {MOCK_IMAGE_SIDE}\n255\n",
            self.id
        )
        .into_bytes();
        let key = hash64(&[
            &self.seed.to_le_bytes(),
            self.id.as_bytes(),
            prompt.as_bytes(),
            &(index as u64).to_le_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        bytes.extend((0..MOCK_IMAGE_SIDE * MOCK_IMAGE_SIDE * 3).map(|_| rng.gen::<u8>()));
        ImageData::new("image/x-portable-pixmap", bytes)
    }
}

#[async_trait]
impl T2IBackend for MockT2I {
    fn backend_id(&self) -> &str {
        &self.id
    }

    async fn generate_raw(&self, prompt: &str, n: usize) -> Result<Vec<ImageData>, ClientError> {
        let lowered = prompt.to_lowercase();
        if let Some(term) = self.refuse_terms.iter().find(|t| lowered.contains(t.as_str())) {
            return Err(ClientError::Refusal(format!("prompt mentions {term:?}")));
        }
        Ok((0..n).map(|i| self.render(prompt, i)).collect())
    }
}
