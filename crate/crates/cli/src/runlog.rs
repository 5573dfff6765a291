//! Machine-readable record of the stages a run executed.

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    /// Data rows, header excluded.
    pub rows: usize,
    pub sha256: String,
}

impl OutputRecord {
    pub fn new(file: String, bytes: &[u8]) -> Self {
        let lines = bytes.iter().filter(|&&b| b == b'\n').count();
        OutputRecord {
            file,
            rows: lines.saturating_sub(1),
            sha256: format!("{:x}", Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Turned off in the manifest; the stage passed its input through.
    Skipped,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: &'static str,
    pub depends_on: Vec<&'static str>,
    pub status: Status,
    pub duration_ms: f64,
    pub outputs: Vec<OutputRecord>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub command: String,
    pub manifest: String,
    pub seed: Option<u64>,
    pub stages: Vec<StageRecord>,
    pub exit_code: i32,
}
