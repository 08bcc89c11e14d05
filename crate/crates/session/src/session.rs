use atelier_core::bench::HumanSubmission;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{Participant, RoundPlan};

/// Minimum time between showing a task and accepting its prompt.
pub const MIN_SECONDS: i64 = 60;
/// Longer inactivity than this expires a session.
pub const IDLE_SECONDS: i64 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    BetweenRounds,
    Expired,
    Complete,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cursor {
    pub round: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("unknown participant or token")]
    Unauthorized,
    #[error("session expired; ask an operator to reopen it")]
    Expired,
    #[error("all rounds are complete")]
    Complete,
    #[error("the next round has not been opened yet")]
    BetweenRounds,
    #[error("the current task has not been shown yet")]
    NotShown,
    #[error("task {0} was already submitted")]
    Duplicate(String),
    #[error("task {0} is not the current task")]
    WrongTask(String),
    #[error("prompt is empty")]
    Empty,
    #[error("submission too early; {remaining} s left on the timer")]
    Timer { remaining: i64 },
    #[error("storage failure: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub participant: Participant,
    pub plan: RoundPlan,
    pub cursor: Cursor,
    pub task_shown_at: Option<DateTime<Utc>>,
    pub last_activity: DateTime<Utc>,
    pub status: Status,
}

/// Cursor and status after `accepted` submissions.
pub fn position(plan: &RoundPlan, accepted: usize) -> (Cursor, Status) {
    if accepted >= plan.total() {
        return (
            Cursor {
                round: plan.rounds.len(),
                index: 0,
            },
            Status::Complete,
        );
    }
    let mut left = accepted;
    for (round, r) in plan.rounds.iter().enumerate() {
        if left < r.task_ids.len() {
            let status = if left == 0 && accepted > 0 { Status::BetweenRounds } else { Status::Active };
            return (Cursor { round, index: left }, status);
        }
        left -= r.task_ids.len();
    }
    unreachable!("accepted < total")
}

impl SessionState {
    pub fn new(participant: Participant, plan: RoundPlan, now: DateTime<Utc>) -> Self {
        let status = if plan.total() == 0 { Status::Complete } else { Status::Active };
        Self {
            participant,
            plan,
            cursor: Cursor::default(),
            task_shown_at: None,
            last_activity: now,
            status,
        }
    }

    pub fn completed(&self) -> usize {
        let before: usize = self.plan.rounds.iter().take(self.cursor.round).map(|r| r.task_ids.len()).sum();
        before + self.cursor.index
    }

    pub fn current_task_id(&self) -> Option<&str> {
        match self.status {
            Status::Active | Status::BetweenRounds => self.plan.task_at(self.cursor.round, self.cursor.index),
            _ => None,
        }
    }

    /// Expires the session after more than the idle limit without activity.
    pub fn expire_idle(&mut self, now: DateTime<Utc>) -> bool {
        let live = matches!(self.status, Status::Active | Status::BetweenRounds);
        if live && now - self.last_activity > Duration::seconds(IDLE_SECONDS) {
            self.status = Status::Expired;
            return true;
        }
        false
    }

    pub fn touch(&mut self, now: DateTime<Utc>) {
        if now > self.last_activity {
            self.last_activity = now;
        }
    }

    fn check_live(&self) -> Result<(), SessionError> {
        match self.status {
            Status::Expired => Err(SessionError::Expired),
            Status::Complete => Err(SessionError::Complete),
            _ => Ok(()),
        }
    }

    /// The task to show now. Opens the next round if one is pending and
    /// stamps the display time on first view.
    pub fn next_task(&mut self, now: DateTime<Utc>) -> Result<(String, DateTime<Utc>, bool), SessionError> {
        self.check_live()?;
        let new_round = self.status == Status::BetweenRounds;
        self.status = Status::Active;
        let id = self.current_task_id().ok_or(SessionError::Complete)?.to_string();
        let shown = *self.task_shown_at.get_or_insert(now);
        Ok((id, shown, new_round))
    }

    pub fn remaining_seconds(&self, now: DateTime<Utc>) -> i64 {
        match self.task_shown_at {
            Some(shown) => (MIN_SECONDS - (now - shown).num_seconds()).max(0),
            None => MIN_SECONDS,
        }
    }

    fn is_submitted(&self, task_id: &str) -> bool {
        let done = self.completed();
        self.plan.task_ids().take(done).any(|t| t == task_id)
    }

    /// Server-side acceptance rules; on success the cursor advances and the
    /// returned row is ready for the log.
    pub fn submit(&mut self, prompt: &str, task_id: Option<&str>, now: DateTime<Utc>) -> Result<HumanSubmission, SessionError> {
        if let Some(t) = task_id {
            if self.is_submitted(t) {
                return Err(SessionError::Duplicate(t.to_string()));
            }
        }
        self.check_live()?;
        if self.status == Status::BetweenRounds {
            return Err(SessionError::BetweenRounds);
        }
        let current = self.current_task_id().ok_or(SessionError::Complete)?.to_string();
        if let Some(t) = task_id.filter(|t| *t != current) {
            return Err(SessionError::WrongTask(t.to_string()));
        }
        if prompt.trim().is_empty() {
            return Err(SessionError::Empty);
        }
        let shown_at = self.task_shown_at.ok_or(SessionError::NotShown)?;
        if now - shown_at < Duration::seconds(MIN_SECONDS) {
            return Err(SessionError::Timer {
                remaining: self.remaining_seconds(now).max(1),
            });
        }
        let row = HumanSubmission {
            anon_id: self.participant.anon_id.clone(),
            group: self.participant.group,
            task_id: current,
            round: self.cursor.round,
            index: self.cursor.index,
            prompt: prompt.to_string(),
            shown_at,
            submitted_at: now,
        };
        let (cursor, status) = position(&self.plan, self.completed() + 1);
        self.cursor = cursor;
        self.status = status;
        self.task_shown_at = None;
        Ok(row)
    }
}
