#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use atelier_core::clients::mock::{MockChat, MockEmbedder};
use atelier_core::clients::{ChatClient, ChatRequest, EmbedModality, Embedder};
use atelier_core::judge::{Judge, JudgeConfig, Retrieval, TaskContext};
use atelier_core::memory::{build_memory, index_annotations, AnnotationSet, Exemplar, ExemplarMemory, MemorySkill};
use atelier_core::task::read_tasks;
use atelier_core::Task;

pub fn sample_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

pub fn tasks() -> Vec<Task> {
    read_tasks(&sample_dir().join("tasks.json")).unwrap()
}

pub fn ctx(id: &str) -> TaskContext {
    let task = tasks().into_iter().find(|t| t.id == id).unwrap();
    TaskContext::load(task, &sample_dir()).unwrap()
}

pub fn embedders() -> (Arc<dyn Embedder>, Arc<dyn Embedder>) {
    (
        Arc::new(MockEmbedder::new("text-embed", EmbedModality::Text, 512, 7)),
        Arc::new(MockEmbedder::new("image-embed", EmbedModality::Image, 256, 7)),
    )
}

pub async fn memories(text: &dyn Embedder, image: &dyn Embedder) -> Vec<ExemplarMemory> {
    let dir = sample_dir();
    let sets: Vec<AnnotationSet> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("annotations.json")).unwrap()).unwrap();
    let annotations: BTreeMap<String, AnnotationSet> = index_annotations(sets).unwrap();
    let mut out = Vec::new();
    for skill in MemorySkill::ALL {
        let raw = std::fs::read_to_string(dir.join(format!("exemplars/{skill}.jsonl"))).unwrap();
        let candidates: Vec<Exemplar> = raw.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let embedder = match skill.modality() {
            atelier_core::Modality::Prompt => text,
            atelier_core::Modality::Image => image,
        };
        let (memory, _) = build_memory(skill, embedder, candidates, &annotations, 0.75, &dir).await.unwrap();
        out.push(memory);
    }
    out
}

pub async fn judge_with(chat: Arc<dyn ChatClient>, retrieval: Retrieval) -> Judge {
    let (text, image) = embedders();
    let mut judge = Judge::new(chat)
        .with_embedders(text.clone(), image.clone())
        .with_config(JudgeConfig {
            retrieval,
            timestamps: false,
        });
    for m in memories(text.as_ref(), image.as_ref()).await {
        judge = judge.with_memory(Arc::new(m));
    }
    judge
}

pub fn mock_judge_chat() -> Arc<MockChat> {
    Arc::new(MockChat::new("judge", 7).flag("gore", "violence"))
}

pub fn exemplar_blocks(req: &ChatRequest) -> usize {
    req.all_text().matches("[Start of Exemplar ").count()
}

pub fn is_subjective(req: &ChatRequest) -> bool {
    req.all_text().contains("1-5 scale")
}
