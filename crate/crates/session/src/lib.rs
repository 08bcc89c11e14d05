//! Live collection of human prompts: balanced task assignment, timed rounds,
//! inactivity expiry and an append-only submission log behind an HTTP API.

pub mod assignment;
pub mod clock;
pub mod http;
pub mod service;
pub mod session;
pub mod store;

pub use assignment::{plan_group_assignment, Group, Participant, PlanError, Round, RoundPlan};
pub use clock::{Clock, ManualClock, SystemClock};
pub use http::router;
pub use service::{CurrentTask, Progress, ServiceConfig, SessionService, SubmitOutcome, TaskView};
pub use session::{Cursor, SessionError, SessionState, Status, IDLE_SECONDS, MIN_SECONDS};
pub use store::{export_log, read_log, replay, write_export, LogStore, StoreError};
