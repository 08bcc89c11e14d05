use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use atelier_core::clients::openai::{OpenAiChat, OpenAiEmbedder, OpenAiImages};
use atelier_core::clients::{
    embed, generate_images, ChatClient, ChatRequest, ClientError, ContentPart, EmbedInput, EmbedModality, Embedder,
    GuardedChat, Hyperparams, Limits, T2IBackend,
};
use atelier_core::ImageData;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use serde_json::{json, Value};

#[derive(Default)]
struct Fake {
    chat_calls: AtomicUsize,
    fail_first: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
    auth: Mutex<Vec<String>>,
}

type Shared = Arc<Fake>;

async fn chat(State(s): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    s.chat_calls.fetch_add(1, Ordering::SeqCst);
    if let Some(a) = headers.get("authorization") {
        s.auth.lock().unwrap().push(a.to_str().unwrap().to_string());
    }
    s.bodies.lock().unwrap().push(body.clone());
    if s.fail_first.load(Ordering::SeqCst) > 0 {
        s.fail_first.fetch_sub(1, Ordering::SeqCst);
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
    }
    let text = body.to_string();
    if text.contains("refuse me") {
        return (
            StatusCode::OK,
            Json(json!({"choices": [{"message": {"content": null, "refusal": "I can't help with that."}, "finish_reason": "stop"}]})),
        );
    }
    if text.contains("bad request") {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": {"message": "unsupported parameter"}})));
    }
    (
        StatusCode::OK,
        Json(json!({"choices": [{"message": {"content": "{\"ok\": 1}"}, "finish_reason": "stop"}]})),
    )
}

async fn embeddings(Json(body): Json<Value>) -> Json<Value> {
    let dim = body["dimensions"].as_u64().unwrap() as usize;
    let len = body["input"].as_str().unwrap().len() as f64;
    let v: Vec<f64> = (0..dim).map(|i| len + i as f64).collect();
    Json(json!({"data": [{"embedding": v}]}))
}

async fn images(Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if body["prompt"].as_str().unwrap().contains("blocked") {
        return (
            StatusCode::BAD_REQUEST,
            Json(json!({"error": {"code": "content_policy_violation", "message": "rejected"}})),
        );
    }
    let n = body["n"].as_u64().unwrap();
    let data: Vec<Value> = (0..n)
        .map(|i| json!({"b64_json": base64::engine::general_purpose::STANDARD.encode(format!("P3\n1 1\n255\n{i} 0 0\n"))}))
        .collect();
    (StatusCode::OK, Json(json!({"data": data})))
}

async fn serve() -> (String, Shared) {
    let state: Shared = Arc::default();
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .route("/v1/images/generations", post(images))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}/v1/", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (base, state)
}

fn fast_limits() -> Limits {
    Limits {
        max_in_flight: 2,
        timeout_secs: 5.0,
        max_attempts: 3,
        initial_backoff_ms: 1,
        max_backoff_ms: 2,
    }
}

#[tokio::test]
async fn chat_wire_format_and_retries() {
    let (base, fake) = serve().await;
    let hyper = Hyperparams {
        temperature: 0.0,
        top_p: 0.7,
        max_output_tokens: 256,
        context_cap: 16384,
    };
    let inner = Arc::new(OpenAiChat::new(&base, "judge-model", Some("sk-test".into()), hyper));
    let chat = GuardedChat::new(inner, fast_limits());
    let image = ImageData::new("image/png", vec![1, 2, 3]);
    let req = ChatRequest::single(Some("sys".into()), vec![ContentPart::Text("hello".into()), ContentPart::Image(image.clone())]);

    fake.fail_first.store(2, Ordering::SeqCst);
    assert_eq!(chat.complete(&req).await.unwrap(), "{\"ok\": 1}");
    assert_eq!(fake.chat_calls.load(Ordering::SeqCst), 3);

    let body = fake.bodies.lock().unwrap().last().unwrap().clone();
    assert_eq!(body["model"], "judge-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["top_p"], 0.7);
    assert_eq!(body["max_tokens"], 256);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "sys"}));
    assert_eq!(body["messages"][1]["content"][0], json!({"type": "text", "text": "hello"}));
    assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], image.data_url());
    assert!(fake.auth.lock().unwrap().iter().all(|a| a == "Bearer sk-test"));

    fake.fail_first.store(5, Ordering::SeqCst);
    match chat.complete(&req).await {
        Err(ClientError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport failure, got {other:?}"),
    }
    fake.fail_first.store(0, Ordering::SeqCst);

    let refuse = ChatRequest::single(None, vec![ContentPart::Text("refuse me".into())]);
    assert!(matches!(chat.complete(&refuse).await, Err(ClientError::Refusal(_))));
    let calls = fake.chat_calls.load(Ordering::SeqCst);
    let bad = ChatRequest::single(None, vec![ContentPart::Text("bad request".into())]);
    assert!(matches!(chat.complete(&bad).await, Err(ClientError::Http { status: 400, .. })));
    assert_eq!(fake.chat_calls.load(Ordering::SeqCst), calls + 1, "client errors are not retried");
}

#[tokio::test]
async fn embeddings_and_images() {
    let (base, _) = serve().await;
    let embedder = OpenAiEmbedder::new("text-embed", &base, "embed-model", None, EmbedModality::Text, 4);
    let e = embed(&embedder, EmbedInput::Text("abc")).await.unwrap();
    assert_eq!(e.embedder_id, embedder.embedder_id());
    assert_eq!(e.vector.len(), 4);
    assert!(matches!(
        embed(&embedder, EmbedInput::Image(&ImageData::new("image/png", vec![0]))).await,
        Err(ClientError::Schema(_))
    ));

    let t2i = OpenAiImages::new("remote", &base, "image-model", None).with_size((512, 512));
    assert_eq!(t2i.image_size(), (512, 512));
    let out = generate_images(&t2i, "a lighthouse", 3).await.unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out[2].bytes, b"P3\n1 1\n255\n2 0 0\n");
    assert!(matches!(generate_images(&t2i, "blocked scene", 1).await, Err(ClientError::Refusal(_))));
}
