use std::io::Write;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::Failure;

pub const SCHEMA_VERSION: &str = "1";

/// Every subcommand writes one of these.
///
/// Run-dependent values (start time and wall time) live under `timestamp`;
/// everything else is a function of the inputs and the seed.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub command: String,
    /// Resolved configuration, enough to repeat the run.
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub result: Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timestamp {
    pub started_unix: u64,
    pub wall_time_seconds: f64,
}

impl Timestamp {
    pub fn new(started: SystemTime, elapsed: Duration) -> Self {
        Self {
            started_unix: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_seconds: elapsed.as_secs_f64(),
        }
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, out: Option<&Path>) -> Result<(), Failure> {
        let text = self.to_json();
        match out {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", path.display()))),
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                lock.write_all(text.as_bytes())
                    .and_then(|_| lock.flush())
                    .map_err(|e| Failure::Invalid(format!("cannot write the report: {e}")))
            }
        }
    }
}
