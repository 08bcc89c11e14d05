mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use atelier_core::bench::HumanLog;
use atelier_core::task::read_tasks;
use atelier_core::{ImageData, TaskCategory};
use atelier_session::{
    export_log, plan_group_assignment, read_log, replay, router, Group, ManualClock, Participant, Round, RoundPlan,
    ServiceConfig, SessionService, Status,
};
use reqwest::StatusCode;
use serde_json::{json, Value};
use common::*;

fn sample_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

struct Server {
    base: String,
    clock: Arc<ManualClock>,
    service: Arc<SessionService>,
    handle: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(config: impl FnOnce(Arc<ManualClock>) -> ServiceConfig, clock: Arc<ManualClock>) -> Self {
        let service = Arc::new(SessionService::open(config(clock.clone())).unwrap());
        let app = router(service.clone(), None);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let handle = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            base,
            clock,
            service,
            handle,
        }
    }
}

struct Client {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl Client {
    fn new(base: &str) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into(),
            token: None,
        }
    }

    async fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let value = resp.json().await.unwrap_or(Value::Null);
        (status, value)
    }

    async fn login(&mut self, anon: &str) -> (StatusCode, Value) {
        let (s, v) = self.send(reqwest::Method::POST, "/api/login", Some(json!({ "anon_id": anon }))).await;
        if s == StatusCode::OK {
            self.token = Some(v["token"].as_str().unwrap().to_string());
        }
        (s, v)
    }

    async fn task(&self) -> (StatusCode, Value) {
        self.send(reqwest::Method::GET, "/api/session/current-task", None).await
    }

    async fn submit(&self, prompt: &str, task_id: Option<&str>) -> (StatusCode, Value) {
        let body = match task_id {
            Some(t) => json!({ "prompt": prompt, "task_id": t }),
            None => json!({ "prompt": prompt }),
        };
        self.send(reqwest::Method::POST, "/api/session/submit", Some(body)).await
    }

    async fn heartbeat(&self) -> (StatusCode, Value) {
        self.send(reqwest::Method::POST, "/api/session/heartbeat", None).await
    }

    async fn progress(&self) -> (StatusCode, Value) {
        self.send(reqwest::Method::GET, "/api/session/progress", None).await
    }
}

fn t0() -> chrono::DateTime<chrono::Utc> {
    "2026-06-01T09:00:00Z".parse().unwrap()
}

/// Sample tasks with a short hand-made plan for one participant.
fn sample_config(dir: &Path) -> impl FnOnce(Arc<ManualClock>) -> ServiceConfig {
    let dir = dir.to_path_buf();
    move |clock| {
        let tasks = read_tasks(&sample_dir().join("tasks.json")).unwrap();
        let plan = RoundPlan {
            rounds: vec![
                Round {
                    category: TaskCategory::Imitation,
                    task_ids: vec!["im_03".into(), "im_15".into()],
                },
                Round {
                    category: TaskCategory::OpenEnded,
                    task_ids: vec!["oe_12".into(), "oe_29".into()],
                },
            ],
        };
        ServiceConfig {
            participants: vec![Participant {
                anon_id: "p01".into(),
                group: Group::Novice,
            }],
            plans: [("p01".to_string(), plan)].into_iter().collect(),
            tasks,
            image_root: sample_dir(),
            data_dir: dir,
            clock,
        }
    }
}

#[tokio::test]
async fn timer_duplicates_and_auth_are_enforced_server_side() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(sample_config(dir.path()), Arc::new(ManualClock::new(t0()))).await;
    let mut c = Client::new(&server.base);

    assert_eq!(c.task().await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(c.login("nobody").await.0, StatusCode::UNAUTHORIZED);
    let bad = c.http.post(format!("{}/api/login", server.base)).body("{").header("content-type", "application/json");
    assert_eq!(bad.send().await.unwrap().status(), StatusCode::BAD_REQUEST);
    let (s, v) = c.login("p01").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["progress"]["completed"], 0);
    assert_eq!(v["progress"]["status"], "active");

    let (s, task) = c.task().await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(task["task"]["task_id"], "im_03");
    assert_eq!(task["remaining_seconds"], 60);
    let image_url = task["task"]["image_url"].as_str().unwrap().to_string();
    let bytes = c.http.get(format!("{}{image_url}", server.base)).send().await.unwrap().bytes().await.unwrap();
    let target = read_tasks(&sample_dir().join("tasks.json")).unwrap()[4].target_image.clone().unwrap();
    assert_eq!(ImageData::new("image/x-portable-pixmap", bytes.to_vec()).sha256_hex(), target.sha256);

    let (s, v) = c.submit("a foggy harbour", None).await;
    assert_eq!(s, StatusCode::TOO_EARLY);
    assert_eq!(v["remaining_seconds"], 60);
    server.clock.advance(30);
    let (s, v) = c.submit("a foggy harbour", None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::TOO_EARLY, Some("timer")));
    assert_eq!(v["remaining_seconds"], 30);
    server.clock.advance(29);
    assert_eq!(c.submit("a foggy harbour", None).await.0, StatusCode::TOO_EARLY);
    server.clock.advance(2);
    assert_eq!(c.submit("   ", None).await.0, StatusCode::BAD_REQUEST);
    let (s, v) = c.submit("a foggy harbour", Some("im_03")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["progress"]["completed"], 1);
    assert_eq!(c.submit("again", Some("im_03")).await.0, StatusCode::CONFLICT);

    let log = read_log(dir.path()).unwrap();
    assert_eq!(log.len(), 1);
    assert!(log.iter().all(|r| (r.submitted_at - r.shown_at).num_seconds() >= 60));

    // Concurrent retries of the same submission: exactly one is accepted.
    c.task().await;
    server.clock.advance(61);
    let (a, b) = tokio::join!(c.submit("twin", Some("im_15")), c.submit("twin", Some("im_15")));
    let mut codes = [a.0, b.0];
    codes.sort();
    assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT]);
    assert_eq!(read_log(dir.path()).unwrap().len(), 2);

    let (s, v) = c.progress().await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("between_rounds")));
    assert_eq!(c.submit("early", None).await.0, StatusCode::CONFLICT);
    let (_, next) = c.task().await;
    assert_eq!(next["new_round"], true);
    assert_eq!(next["task"]["task_id"], "oe_12");
    assert_eq!(next["task"]["description"].as_str().is_some(), true);
    server.handle.abort();
}

#[tokio::test]
async fn idle_sessions_expire_and_stay_expired() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(sample_config(dir.path()), Arc::new(ManualClock::new(t0()))).await;
    let mut c = Client::new(&server.base);
    c.login("p01").await;
    c.task().await;
    server.clock.advance(599);
    assert_eq!(c.heartbeat().await.0, StatusCode::OK);
    server.clock.advance(600);
    assert_eq!(c.heartbeat().await.0, StatusCode::OK);
    server.clock.advance(601);
    let (s, v) = c.submit("late", None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::GONE, Some("expired")));
    assert_eq!(c.task().await.0, StatusCode::GONE);
    assert_eq!(c.login("p01").await.0, StatusCode::GONE);
    server.clock.advance(10_000);
    assert_eq!(c.progress().await.0, StatusCode::GONE);

    server.service.reopen("p01").await.unwrap();
    let (s, v) = c.login("p01").await;
    assert_eq!((s, v["progress"]["status"].as_str()), (StatusCode::OK, Some("active")));
    let (_, task) = c.task().await;
    assert_eq!(task["remaining_seconds"], 60);
    server.handle.abort();
}

fn full_config(dir: &Path) -> impl FnOnce(Arc<ManualClock>) -> ServiceConfig {
    let dir = dir.to_path_buf();
    move |clock| {
        let tasks = pool(120);
        let mut participants = group(24, Group::Novice);
        participants.extend(group(24, Group::Skilled));
        let mut plans = plan_group_assignment(&participants[..24], &tasks, 3).unwrap();
        plans.extend(plan_group_assignment(&participants[24..], &tasks, 4).unwrap());
        ServiceConfig {
            participants,
            plans,
            tasks,
            image_root: sample_dir(),
            data_dir: dir,
            clock,
        }
    }
}

#[tokio::test]
async fn full_sessions_replay_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(t0()));
    let server = Server::start(full_config(dir.path()), clock.clone()).await;

    let mut seen_between = 0;
    for anon in ["novice-03", "skilled-07"] {
        let mut c = Client::new(&server.base);
        c.login(anon).await;
        for i in 0..30 {
            let (s, task) = c.task().await;
            assert_eq!(s, StatusCode::OK);
            assert_eq!(task["new_round"], i > 0 && i % 5 == 0);
            clock.advance(61);
            let id = task["task"]["task_id"].as_str().unwrap().to_string();
            let (s, v) = c.submit(&format!("{anon} prompt {i}"), Some(&id)).await;
            assert_eq!(s, StatusCode::OK);
            let status = v["progress"]["status"].as_str().unwrap();
            if i == 29 {
                assert_eq!(status, "complete");
            } else if i % 5 == 4 {
                assert_eq!(status, "between_rounds");
                seen_between += 1;
            } else {
                assert_eq!(status, "active");
            }
        }
        let (s, v) = c.task().await;
        assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("complete")));
    }
    assert_eq!(seen_between, 10);

    // Partial session for a third participant, interrupted mid-task.
    let mut c = Client::new(&server.base);
    c.login("novice-11").await;
    for _ in 0..7 {
        c.task().await;
        clock.advance(61);
        c.submit("partial", None).await;
    }
    c.task().await;
    let live = server.service.states().await;
    server.handle.abort();

    let config = full_config(dir.path());
    let restarted = SessionService::open(config(clock.clone())).unwrap();
    let after = restarted.states().await;
    assert_eq!(after.len(), 3);
    for (anon, state) in &live {
        assert_eq!(after[anon].cursor, state.cursor, "{anon}");
        assert_eq!(after[anon].status, state.status);
    }
    let plans: BTreeMap<String, RoundPlan> = after.iter().map(|(k, v)| (k.clone(), v.plan.clone())).collect();
    let replayed = replay(&read_log(dir.path()).unwrap(), &plans).unwrap();
    for (anon, (cursor, status)) in replayed {
        assert_eq!(cursor, live[&anon].cursor);
        assert_eq!(status, live[&anon].status);
    }
    assert_eq!(after["novice-03"].status, Status::Complete);

    let rows = export_log(dir.path()).unwrap();
    assert_eq!(rows.len(), 67);
    let keys: Vec<_> = rows.iter().map(|r| (r.anon_id.clone(), r.round, r.index)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let body: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    let log = HumanLog::parse(&body).unwrap();
    assert_eq!(log.for_group(Group::Novice).count(), 37);
    assert_eq!(log.for_group(Group::Skilled).count(), 30);
    assert!(export_log(tempfile::tempdir().unwrap().path()).unwrap().is_empty());
}
