mod common;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use atelier_core::clients::mock::{MockChat, MockT2I, ScriptedChat};
use atelier_core::clients::{ChatClient, ChatRequest, ClientError, ContentPart};
use atelier_core::judge::{
    parse_objective_response, render_skill_prompt, route_skills, JudgeError, Payload, Retrieval, Skill, TemplateSet,
};
use atelier_core::memory::MemorySkill;
use atelier_core::task::Checkpoint;
use atelier_core::{ImageData, Modality, TaskCategory};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use serde::Deserialize;

use common::*;

const PROMPT: &str = "Flat vector poster of a calm greenhouse reading nook, warm lamp light, hand-drawn texture, no screens.";

fn image_for(prompt: &str) -> ImageData {
    MockT2I::new("t2i-a", 7).render(prompt, 0)
}

#[tokio::test]
async fn plan_shape_per_category() {
    for (id, subjective) in [("oe_12", 2), ("co_07", 2), ("im_03", 1)] {
        let judge = judge_with(mock_judge_chat(), Retrieval::default()).await;
        let ctx = ctx(id);
        let record = judge.evaluate_submission(&ctx, "p", PROMPT, &image_for(PROMPT)).await.unwrap();
        assert!(!record.excluded);
        assert!(record.errors.is_empty(), "{:?}", record.errors);
        assert_eq!(record.safety.len(), 2);
        assert_eq!(record.subjective.len(), subjective, "{id}");
        assert_eq!(record.objective.len(), 2);
        if ctx.task.category == TaskCategory::Imitation {
            assert!(record.subjective_for(Modality::Image).is_none());
        }
        for o in &record.objective {
            let ids: Vec<_> = ctx.task.checklist_for(o.modality).into_iter().map(|c| c.id).collect();
            let mut keys: Vec<_> = o.verdicts.keys().cloned().collect();
            keys.sort();
            let mut ids_sorted = ids.clone();
            ids_sorted.sort();
            assert_eq!(keys, ids_sorted);
        }
        for s in &record.subjective {
            assert!(s.scores.values().all(|v| (1..=5).contains(v)));
        }
    }
}

#[tokio::test]
async fn rendered_requests_follow_the_skill_contract() {
    let chat = mock_judge_chat();
    let judge = judge_with(chat.clone(), Retrieval::Similarity { k: 3 }).await;
    let ctx = ctx("co_07");
    judge.evaluate_submission(&ctx, "p", PROMPT, &image_for(PROMPT)).await.unwrap();
    let requests = chat.requests();
    assert_eq!(requests.len(), 6);
    let system = |r: &ChatRequest| r.system.clone().unwrap_or_default();
    let subjective: Vec<_> = requests.iter().filter(|r| system(r).contains("Evaluator") || system(r).contains("Art Director")).collect();
    assert_eq!(subjective.len(), 2);
    for r in subjective {
        assert_eq!(exemplar_blocks(r), 3);
        assert_eq!(r.all_text().matches("[End of Exemplar ").count(), 3);
    }
    for modality in Modality::ALL {
        let marker = if modality == Modality::Image { "visual checklist" } else { "prompt checklist" };
        let r = requests.iter().find(|r| system(r).contains(marker)).unwrap();
        assert_eq!(exemplar_blocks(r), 0);
        for c in ctx.task.checklist_for(modality) {
            assert!(r.all_text().contains(&format!("- {}\n", c.text)) || r.all_text().contains(&format!("- {}", c.text)));
        }
        if modality == Modality::Image {
            assert_eq!(r.images().count(), 1);
        }
    }
}

#[tokio::test]
async fn zero_shot_renders_query_only() {
    let chat = mock_judge_chat();
    let judge = judge_with(chat.clone(), Retrieval::ZeroShot).await;
    let record = judge.evaluate_submission(&ctx("oe_29"), "p", PROMPT, &image_for(PROMPT)).await.unwrap();
    assert!(record.retrieved_exemplar_ids.values().all(Vec::is_empty));
    for r in chat.requests() {
        assert_eq!(exemplar_blocks(&r), 0);
    }
    let r = chat
        .requests()
        .into_iter()
        .find(|r| r.system.as_deref().unwrap_or("").contains("Prompt Engineer"))
        .unwrap();
    assert!(r.all_text().contains("Instructional Clarity (Grammar"));
}

#[tokio::test]
async fn imitation_prompt_skill_sees_the_target() {
    let chat = mock_judge_chat();
    let judge = judge_with(chat.clone(), Retrieval::default()).await;
    let ctx = ctx("im_15");
    judge.evaluate_submission(&ctx, "p", PROMPT, &image_for(PROMPT)).await.unwrap();
    let r = chat
        .requests()
        .into_iter()
        .find(|r| r.system.as_deref().unwrap_or("").contains("Prompt Engineer"))
        .unwrap();
    let images: Vec<_> = r.images().collect();
    assert_eq!(images, [ctx.target.as_ref().unwrap()]);
}

#[tokio::test]
async fn runs_are_deterministic() {
    let a = judge_with(mock_judge_chat(), Retrieval::default()).await;
    let b = judge_with(mock_judge_chat(), Retrieval::default()).await;
    for id in ["oe_12", "co_21", "im_03"] {
        let c = ctx(id);
        let x = a.evaluate_submission(&c, "p", PROMPT, &image_for(PROMPT)).await.unwrap();
        let y = b.evaluate_submission(&c, "p", PROMPT, &image_for(PROMPT)).await.unwrap();
        assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
    }
}

/// Delays every reply by a random amount so skills finish in varying order.
struct Jittered {
    inner: MockChat,
    rng: std::sync::Mutex<rand_chacha::ChaCha8Rng>,
}

#[async_trait]
impl ChatClient for Jittered {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let ms = self.rng.lock().unwrap().gen_range(0..15);
        tokio::time::sleep(Duration::from_millis(ms)).await;
        self.inner.complete(request).await
    }
}

#[tokio::test]
async fn result_is_independent_of_scheduling() {
    let baseline = judge_with(mock_judge_chat(), Retrieval::default()).await;
    let c = ctx("oe_29");
    let image = image_for(PROMPT);
    let want = baseline.evaluate_submission(&c, "p", PROMPT, &image).await.unwrap();
    for seed in 0..5 {
        let chat = Arc::new(Jittered {
            inner: MockChat::new("judge", 7).flag("gore", "violence"),
            rng: std::sync::Mutex::new(rand_chacha::ChaCha8Rng::seed_from_u64(seed)),
        });
        let judge = judge_with(chat, Retrieval::default()).await;
        let got = judge.evaluate_submission(&c, "p", PROMPT, &image).await.unwrap();
        assert_eq!(got, want, "seed {seed}");
    }
}

#[tokio::test]
async fn flagged_payload_is_excluded() {
    let judge = judge_with(mock_judge_chat(), Retrieval::default()).await;
    let prompt = "A harbour scene with gore on the quay";
    let record = judge.evaluate_submission(&ctx("oe_29"), "p", prompt, &image_for(prompt)).await.unwrap();
    assert!(record.excluded);
    assert!(record.subjective.is_empty() && record.objective.is_empty());
    let prompt_verdict = &record.safety[0];
    assert_eq!(prompt_verdict.modality, Modality::Prompt);
    assert_eq!(prompt_verdict.categories, ["violence"]);
}

#[tokio::test]
async fn unusable_safety_reply_is_retryable() {
    let chat = Arc::new(ScriptedChat::new("judge", vec!["I think it is fine.".into()]));
    let judge = judge_with(chat.clone(), Retrieval::ZeroShot).await;
    let err = judge
        .evaluate_submission(&ctx("oe_12"), "p", PROMPT, &image_for(PROMPT))
        .await
        .unwrap_err();
    assert!(matches!(err, JudgeError::Safety { .. }));
    assert!(err.is_retryable());
    assert_eq!(chat.requests().len(), 4);
}

#[tokio::test]
async fn one_reask_then_success() {
    let good = r#"{"flagged": false, "categories": [], "detail": "ok"}"#;
    let chat = Arc::new(ScriptedChat::new("judge", vec!["not json".into(), good.into()]));
    let judge = judge_with(chat.clone(), Retrieval::ZeroShot).await;
    let verdict = judge.safety_check(&ctx("oe_12"), Payload::Prompt(PROMPT)).await.unwrap();
    assert!(!verdict.flagged);
    let requests = chat.requests();
    assert_eq!(requests.len(), 2);
    assert_eq!(requests[1].messages.len(), 3);
    assert!(requests[1].messages[2].text().contains("could not be used"));
}

#[tokio::test]
async fn persistent_parse_failure_is_annotated_not_dropped() {
    let safe = r#"{"flagged": false, "categories": []}"#;
    let chat = Arc::new(ScriptedChat::new("judge", vec![safe.into(), safe.into(), "{}".into()]));
    let judge = judge_with(chat, Retrieval::ZeroShot).await;
    let record = judge
        .evaluate_submission(&ctx("im_03"), "p", PROMPT, &image_for(PROMPT))
        .await
        .unwrap();
    assert_eq!(record.errors.len(), 3);
    assert!(record.errors.iter().all(|e| e.message.contains("after 2 attempts")));
}

#[tokio::test]
async fn memory_embedder_mismatch_is_reported() {
    let mut judge = judge_with(mock_judge_chat(), Retrieval::default()).await;
    let (_, image) = embedders();
    judge.text_embedder = Some(image);
    let record = judge
        .evaluate_submission(&ctx("oe_12"), "p", PROMPT, &image_for(PROMPT))
        .await
        .unwrap();
    assert_eq!(record.errors.len(), 1);
    assert_eq!(record.errors[0].skill, "prompt-subjective-OE");
}

#[test]
fn routing_invariants() {
    for code in ["OE", "CO", "IM"] {
        let plan = route_skills(code).unwrap();
        assert_eq!(plan.objective, Modality::ALL);
        assert_eq!(plan.safety, Modality::ALL);
        let image_subjective = plan.subjective.iter().any(|s| s.modality() == Modality::Image);
        assert_eq!(image_subjective, code != "IM");
        assert!(plan.subjective.iter().any(|s| s.modality() == Modality::Prompt));
    }
    assert!(route_skills("XX").is_err());
}

#[derive(Deserialize)]
struct Adversarial {
    kind: String,
    checklist: Vec<String>,
    reply: String,
    #[serde(default)]
    passes: usize,
}

fn checkpoints(texts: &[String], modality: Modality) -> Vec<Checkpoint> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Checkpoint {
            id: format!("c{i}"),
            modality,
            text: t.clone(),
            pair_id: i.to_string(),
        })
        .collect()
}

#[test]
fn adversarial_objective_replies() {
    let cases: Vec<Adversarial> =
        serde_json::from_str(include_str!("fixtures/objective_adversarial.json")).unwrap();
    let rejects = cases.iter().filter(|c| c.kind != "accept").count();
    assert!(rejects >= 50);
    for case in &cases {
        let got = parse_objective_response(&case.reply, &checkpoints(&case.checklist, Modality::Image));
        if case.kind == "accept" {
            let r = got.unwrap();
            assert_eq!(r.satisfaction_rate, case.passes as f64 / case.checklist.len() as f64);
        } else {
            assert!(got.is_err(), "{} accepted: {}", case.kind, case.reply);
        }
    }
}

fn item_text() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z ,'\"]{0,30}[a-z.]"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_render_parse_bijection(
        texts in prop::collection::btree_set(item_text(), 1..8),
        seed in any::<u64>(),
    ) {
        let texts: Vec<String> = texts.into_iter().collect();
        prop_assume!({
            let mut n: Vec<_> = texts.iter().map(|t| t.trim().to_string()).collect();
            n.sort();
            n.dedup();
            n.len() == texts.len()
        });
        let mut task = ctx("oe_12").task;
        task.checklist = checkpoints(&texts, Modality::Prompt);
        let c = atelier_core::judge::TaskContext::new(task.clone(), None);
        let req = render_skill_prompt(&TemplateSet::builtin(), Skill::Objective(Modality::Prompt), &c, Payload::Prompt("x"), &[]).unwrap();
        let chat = MockChat::new("judge", seed);
        let reply = futures::executor::block_on(chat.complete(&req)).unwrap();
        let r = parse_objective_response(&reply, &task.checklist).unwrap();
        let mut keys: Vec<_> = r.verdicts.keys().cloned().collect();
        keys.sort();
        let mut ids: Vec<_> = task.checklist.iter().map(|c| c.id.clone()).collect();
        ids.sort();
        prop_assert_eq!(keys, ids);
        let mean = r.verdicts.values().filter(|v| **v).count() as f64 / r.verdicts.len() as f64;
        prop_assert_eq!(r.satisfaction_rate, mean);
        prop_assert!((0.0..=1.0).contains(&r.satisfaction_rate));
    }
}

#[test]
fn image_exemplars_are_attached() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let chat = mock_judge_chat();
        let judge = judge_with(chat.clone(), Retrieval::Similarity { k: 2 }).await;
        let image = image_for(PROMPT);
        judge.evaluate_submission(&ctx("oe_12"), "p", PROMPT, &image).await.unwrap();
        let r = chat
            .requests()
            .into_iter()
            .find(|r| r.system.as_deref().unwrap_or("").contains("Art Director"))
            .unwrap();
        assert_eq!(exemplar_blocks(&r), 2);
        let parts = &r.messages[0].content;
        assert_eq!(parts.iter().filter(|p| matches!(p, ContentPart::Image(_))).count(), 3);
        assert_eq!(r.images().last().unwrap(), &image);
        let memory = judge.memories.get(&MemorySkill::ImageOE).unwrap();
        assert!(memory.len() >= 2);
    });
}
