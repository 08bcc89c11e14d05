use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use atelier_core::task::IMITATION_INSTRUCTION;
use atelier_core::{Task, TaskCategory};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

use crate::assignment::{Group, Participant, RoundPlan};
use crate::clock::Clock;
use crate::session::{SessionError, SessionState, Status, MIN_SECONDS};
use crate::store::{read_log, read_snapshot, replay, LogStore, Snapshot, StoreError};

pub struct ServiceConfig {
    pub participants: Vec<Participant>,
    pub plans: BTreeMap<String, RoundPlan>,
    pub tasks: Vec<Task>,
    /// Root that task image paths are relative to.
    pub image_root: PathBuf,
    pub data_dir: PathBuf,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub text: String,
}

/// Task content as shown to a participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub category: TaskCategory,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl TaskView {
    fn from_task(t: &Task) -> Self {
        let imitation = t.category == TaskCategory::Imitation;
        Self {
            task_id: t.id.clone(),
            category: t.category,
            title: t.title.clone(),
            description: t.description.clone(),
            sections: t
                .structured_constraints
                .iter()
                .map(|(n, x)| Section {
                    name: n.to_string(),
                    text: x.to_string(),
                })
                .collect(),
            instruction: imitation.then(|| IMITATION_INSTRUCTION.to_string()),
            image_url: t.target_image.as_ref().map(|_| format!("/api/tasks/{}/image", t.id)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurrentTask {
    pub status: Status,
    pub round: usize,
    pub index: usize,
    pub round_size: usize,
    /// True on the first view of a round's opening task.
    pub new_round: bool,
    pub task: TaskView,
    pub shown_at: DateTime<Utc>,
    pub server_now: DateTime<Utc>,
    pub min_seconds: i64,
    pub remaining_seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundProgress {
    pub category: TaskCategory,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub anon_id: String,
    pub group: Group,
    pub status: Status,
    pub round: usize,
    pub index: usize,
    pub completed: usize,
    pub total: usize,
    pub rounds: Vec<RoundProgress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: bool,
    pub task_id: String,
    pub progress: Progress,
}

fn progress(s: &SessionState) -> Progress {
    let done = s.completed();
    let mut before = 0;
    let rounds = s
        .plan
        .rounds
        .iter()
        .map(|r| {
            let completed = done.saturating_sub(before).min(r.task_ids.len());
            before += r.task_ids.len();
            RoundProgress {
                category: r.category,
                completed,
                total: r.task_ids.len(),
            }
        })
        .collect();
    Progress {
        anon_id: s.participant.anon_id.clone(),
        group: s.participant.group,
        status: s.status,
        round: s.cursor.round,
        index: s.cursor.index,
        completed: done,
        total: s.plan.total(),
        rounds,
    }
}

type Shared = Arc<AsyncMutex<SessionState>>;

pub struct SessionService {
    participants: BTreeMap<String, Participant>,
    plans: BTreeMap<String, RoundPlan>,
    tasks: BTreeMap<String, Task>,
    image_root: PathBuf,
    sessions: Mutex<BTreeMap<String, Shared>>,
    snapshot: Mutex<Snapshot>,
    tokens: RwLock<HashMap<String, String>>,
    store: LogStore,
    clock: Arc<dyn Clock>,
}

impl SessionService {
    /// Loads the snapshot and replays the log; the log decides cursors.
    pub fn open(config: ServiceConfig) -> Result<Self, StoreError> {
        let tasks: BTreeMap<String, Task> = config.tasks.into_iter().map(|t| (t.id.clone(), t)).collect();
        for (anon, plan) in &config.plans {
            if let Some(t) = plan.task_ids().find(|t| !tasks.contains_key(*t)) {
                return Err(StoreError::Mismatch(format!("plan for {anon} references unknown task {t}")));
            }
        }
        let participants: BTreeMap<String, Participant> =
            config.participants.into_iter().map(|p| (p.anon_id.clone(), p)).collect();
        if let Some(p) = participants.keys().find(|p| !config.plans.contains_key(*p)) {
            return Err(StoreError::Mismatch(format!("participant {p} has no plan")));
        }
        let store = LogStore::open(&config.data_dir)?;
        let snapshot = read_snapshot(&config.data_dir)?.unwrap_or_default();
        let cursors = replay(&read_log(&config.data_dir)?, &config.plans)?;
        let now = config.clock.now();
        let mut sessions = BTreeMap::new();
        let mut kept = Snapshot::default();
        for (anon, p) in &participants {
            let plan = &config.plans[anon];
            let snap = snapshot.sessions.get(anon);
            if let Some(s) = snap {
                if &s.plan != plan {
                    return Err(StoreError::Mismatch(format!("stored plan for {anon} differs from the assignment")));
                }
            }
            let replayed = cursors.get(anon);
            if snap.is_none() && replayed.is_none() {
                continue;
            }
            let mut state = snap
                .cloned()
                .unwrap_or_else(|| SessionState::new(p.clone(), plan.clone(), now));
            if let Some((cursor, status)) = replayed {
                if state.cursor != *cursor {
                    state.cursor = *cursor;
                    state.task_shown_at = None;
                    if state.status != Status::Expired {
                        state.status = *status;
                    }
                }
            }
            kept.sessions.insert(anon.clone(), state.clone());
            sessions.insert(anon.clone(), Arc::new(AsyncMutex::new(state)));
        }
        Ok(Self {
            participants,
            plans: config.plans,
            tasks,
            image_root: config.image_root,
            sessions: Mutex::new(sessions),
            snapshot: Mutex::new(kept),
            tokens: RwLock::new(HashMap::new()),
            store,
            clock: config.clock,
        })
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn image_root(&self) -> &std::path::Path {
        &self.image_root
    }

    /// Records one session's state and rewrites the snapshot.
    fn persist(&self, state: &SessionState) -> Result<(), SessionError> {
        let mut snapshot = self.snapshot.lock().unwrap();
        snapshot
            .sessions
            .insert(state.participant.anon_id.clone(), state.clone());
        self.store
            .write_snapshot(&snapshot)
            .map_err(|e| SessionError::Storage(e.to_string()))
    }

    fn session_for_token(&self, token: &str) -> Result<Shared, SessionError> {
        let anon = self
            .tokens
            .read()
            .unwrap()
            .get(token)
            .cloned()
            .ok_or(SessionError::Unauthorized)?;
        self.sessions
            .lock()
            .unwrap()
            .get(&anon)
            .cloned()
            .ok_or(SessionError::Unauthorized)
    }

    /// Runs `f` on the token's session after the idle check, then persists.
    async fn with_session<T>(
        &self,
        token: &str,
        f: impl FnOnce(&mut SessionState, DateTime<Utc>) -> Result<T, SessionError>,
    ) -> Result<T, SessionError> {
        let handle = self.session_for_token(token)?;
        let mut state = handle.lock().await;
        let now = self.clock.now();
        state.expire_idle(now);
        let result = if state.status == Status::Expired {
            Err(SessionError::Expired)
        } else {
            let r = f(&mut state, now);
            if !matches!(r, Err(SessionError::Expired)) {
                state.touch(now);
            }
            r
        };
        self.persist(&state)?;
        result
    }

    /// New or resumed session for an enrolled participant.
    pub async fn login(&self, anon_id: &str) -> Result<(String, Progress), SessionError> {
        let p = self.participants.get(anon_id).ok_or(SessionError::Unauthorized)?;
        let now = self.clock.now();
        let handle = self
            .sessions
            .lock()
            .unwrap()
            .entry(anon_id.to_string())
            .or_insert_with(|| Arc::new(AsyncMutex::new(SessionState::new(p.clone(), self.plans[anon_id].clone(), now))))
            .clone();
        let progress = {
            let mut state = handle.lock().await;
            state.expire_idle(now);
            if state.status == Status::Expired {
                self.persist(&state)?;
                return Err(SessionError::Expired);
            }
            state.touch(now);
            self.persist(&state)?;
            progress(&state)
        };
        let token = uuid::Uuid::new_v4().to_string();
        self.tokens.write().unwrap().insert(token.clone(), anon_id.to_string());
        Ok((token, progress))
    }

    pub async fn current_task(&self, token: &str) -> Result<CurrentTask, SessionError> {
        self.with_session(token, |s, now| {
            let (id, shown_at, new_round) = s.next_task(now)?;
            let task = self.tasks.get(&id).ok_or_else(|| SessionError::Storage(format!("task {id} missing")))?;
            Ok(CurrentTask {
                status: s.status,
                round: s.cursor.round,
                index: s.cursor.index,
                round_size: s.plan.rounds[s.cursor.round].task_ids.len(),
                new_round,
                task: TaskView::from_task(task),
                shown_at,
                server_now: now,
                min_seconds: MIN_SECONDS,
                remaining_seconds: s.remaining_seconds(now),
            })
        })
        .await
    }

    /// Validates, appends to the log, then advances the cursor.
    pub async fn submit(&self, token: &str, prompt: &str, task_id: Option<&str>) -> Result<SubmitOutcome, SessionError> {
        self.with_session(token, |s, now| {
            let mut next = s.clone();
            let row = next.submit(prompt, task_id, now)?;
            self.store.append(&row).map_err(|e| SessionError::Storage(e.to_string()))?;
            *s = next;
            Ok(SubmitOutcome {
                accepted: true,
                task_id: row.task_id,
                progress: progress(s),
            })
        })
        .await
    }

    pub async fn progress(&self, token: &str) -> Result<Progress, SessionError> {
        self.with_session(token, |s, _| Ok(progress(s))).await
    }

    pub async fn heartbeat(&self, token: &str) -> Result<Progress, SessionError> {
        self.progress(token).await
    }

    /// Operator action: reopens an expired session where it stopped.
    pub async fn reopen(&self, anon_id: &str) -> Result<Progress, SessionError> {
        let handle = self
            .sessions
            .lock()
            .unwrap()
            .get(anon_id)
            .cloned()
            .ok_or(SessionError::Unauthorized)?;
        let progress = {
            let mut s = handle.lock().await;
            if s.status == Status::Expired {
                let (_, status) = crate::session::position(&s.plan, s.completed());
                s.status = status;
                s.task_shown_at = None;
                s.last_activity = self.clock.now();
            }
            self.persist(&s)?;
            progress(&s)
        };
        Ok(progress)
    }

    /// Current state of every started session.
    pub async fn states(&self) -> BTreeMap<String, SessionState> {
        let handles: Vec<(String, Shared)> = self
            .sessions
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut out = BTreeMap::new();
        for (k, h) in handles {
            out.insert(k, h.lock().await.clone());
        }
        out
    }
}
