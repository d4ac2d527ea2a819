use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::edit::TargetRecord;
use crate::error::Result;
use crate::mappers::{interpolate_codes, Channel, EditDirections};
use crate::nerf::{CameraPose, Codes};

/// One recorded mutation of a session's codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HistoryEntry {
    Edit { target: TargetRecord, channel: Channel, scale: f64, directions: EditDirections },
    Interpolate { toward: Codes, ratio: f64 },
}

impl HistoryEntry {
    pub fn apply(&self, codes: &Codes) -> Result<Codes> {
        match self {
            HistoryEntry::Edit { directions, scale, .. } => directions.apply(codes, *scale),
            HistoryEntry::Interpolate { toward, ratio } => interpolate_codes(codes, toward, *ratio),
        }
    }
}

/// A live editing context over one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub checkpoint: String,
    pub initial_codes: Codes,
    pub codes: Codes,
    pub pose: CameraPose,
    pub history: Vec<HistoryEntry>,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub updated: u64,
}

pub(crate) fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Session {
    pub fn new(id: String, checkpoint: String, codes: Codes, pose: CameraPose) -> Self {
        let t = now();
        Session { id, checkpoint, initial_codes: codes.clone(), codes, pose, history: Vec::new(), created: t, updated: t }
    }

    /// Apply `entry` to the current codes and record it.
    pub fn push(&mut self, entry: HistoryEntry) -> Result<()> {
        self.codes = entry.apply(&self.codes)?;
        self.history.push(entry);
        self.updated = now();
        Ok(())
    }

    /// Codes obtained by replaying the history from the initial codes.
    pub fn replay(&self) -> Result<Codes> {
        self.history.iter().try_fold(self.initial_codes.clone(), |codes, e| e.apply(&codes))
    }
}
