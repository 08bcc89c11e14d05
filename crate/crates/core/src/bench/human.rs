use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{BenchError, Strategy};

/// One accepted prompt from a collection session, as exported by the
/// session service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanSubmission {
    pub anon_id: String,
    pub group: Strategy,
    pub task_id: String,
    pub round: usize,
    /// Task position within the round.
    pub index: usize,
    pub prompt: String,
    pub shown_at: DateTime<Utc>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanLog {
    pub rows: Vec<HumanSubmission>,
}

impl HumanLog {
    /// Reads a JSON array or JSON Lines export.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Precondition(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| BenchError::Precondition(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let trimmed = text.trim_start();
        let rows = if trimmed.starts_with('[') {
            serde_json::from_str(trimmed).map_err(|e| e.to_string())?
        } else {
            trimmed
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(Self { rows })
    }

    pub fn for_group(&self, group: Strategy) -> impl Iterator<Item = &HumanSubmission> {
        self.rows.iter().filter(move |r| r.group == group)
    }
}
