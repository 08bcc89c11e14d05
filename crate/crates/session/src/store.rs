//! Append-only submission log plus a session snapshot.
//!
//! `submissions.jsonl` is the source of truth for progress; `sessions.json`
//! keeps timers and status between restarts and is replaced atomically.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use atelier_core::bench::HumanSubmission;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::RoundPlan;
use crate::session::{position, Cursor, SessionState, Status};

pub const LOG_FILE: &str = "submissions.jsonl";
pub const SNAPSHOT_FILE: &str = "sessions.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("log does not match the assignment: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sessions: BTreeMap<String, SessionState>,
}

#[derive(Debug)]
pub struct LogStore {
    dir: PathBuf,
    log: Mutex<File>,
    snapshot: Mutex<()>,
}

impl LogStore {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOG_FILE);
        let log = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: Mutex::new(log),
            snapshot: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes one line and syncs it before returning.
    pub fn append(&self, row: &HumanSubmission) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(row).expect("rows serialize");
        line.push(b'\n');
        let path = self.dir.join(LOG_FILE);
        let mut file = self.log.lock().unwrap();
        file.write_all(&line).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))
    }

    pub fn write_snapshot(&self, snapshot: &Snapshot) -> Result<(), StoreError> {
        let _guard = self.snapshot.lock().unwrap();
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let body = serde_json::to_vec_pretty(snapshot).expect("snapshot serializes");
        std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

pub fn read_log(dir: &Path) -> Result<Vec<HumanSubmission>, StoreError> {
    let path = dir.join(LOG_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_snapshot(dir: &Path) -> Result<Option<Snapshot>, StoreError> {
    let path = dir.join(SNAPSHOT_FILE);
    match std::fs::read_to_string(&path) {
        Ok(t) => serde_json::from_str(&t).map(Some).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Final cursor and status per participant from the log alone. Rows must
/// follow each participant's plan in order.
pub fn replay(
    rows: &[HumanSubmission],
    plans: &BTreeMap<String, RoundPlan>,
) -> Result<BTreeMap<String, (Cursor, Status)>, StoreError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for row in rows {
        let plan = plans
            .get(&row.anon_id)
            .ok_or_else(|| StoreError::Mismatch(format!("unknown participant {}", row.anon_id)))?;
        let n = counts.entry(row.anon_id.as_str()).or_default();
        let (cursor, _) = position(plan, *n);
        let expected = plan.task_at(cursor.round, cursor.index);
        if expected != Some(row.task_id.as_str()) || (cursor.round, cursor.index) != (row.round, row.index) {
            return Err(StoreError::Mismatch(format!(
                "{} submission {} is task {} at ({}, {}), plan expects {:?}",
                row.anon_id,
                *n + 1,
                row.task_id,
                row.round,
                row.index,
                expected
            )));
        }
        *n += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(anon, n)| (anon.to_string(), position(&plans[anon], n)))
        .collect())
}

/// The log in (participant, round, task index) order, ready for the bench's
/// human-log ingest.
pub fn export_log(dir: &Path) -> Result<Vec<HumanSubmission>, StoreError> {
    let mut rows = read_log(dir)?;
    rows.sort_by(|a, b| (&a.anon_id, a.round, a.index).cmp(&(&b.anon_id, b.round, b.index)));
    Ok(rows)
}

/// Writes the export as JSON Lines.
pub fn write_export(rows: &[HumanSubmission], out: &Path) -> Result<(), StoreError> {
    let mut body = String::new();
    for r in rows {
        body.push_str(&serde_json::to_string(r).expect("rows serialize"));
        body.push('\n');
    }
    std::fs::write(out, body).map_err(io_err(out))
}
