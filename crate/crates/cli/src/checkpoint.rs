//! Resumable checkpoints.

use std::path::{Path, PathBuf};

use frontlab_core::{ObservationLog, RunCheckpoint};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::records::{code_version, write_atomically};

/// A paused replica together with the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeCheckpoint {
    pub code_version: String,
    pub config: ExperimentConfig,
    pub replica: u64,
    pub run: RunCheckpoint,
    /// Log records written before the pause.
    pub log: ObservationLog,
}

impl ResumeCheckpoint {
    pub fn new(config: &ExperimentConfig, run: RunCheckpoint, log: ObservationLog) -> Self {
        Self { code_version: code_version(), config: config.clone(), replica: run.stream.replica_id, run, log }
    }

    pub fn file_name(prefix: &str, replica: u64) -> String {
        format!("{prefix}_{replica:04}.json")
    }

    pub fn save(&self, dir: &Path, prefix: &str) -> CliResult<PathBuf> {
        let path = dir.join(Self::file_name(prefix, self.replica));
        write_atomically(&path, serde_json::to_string(self)?.as_bytes())?;
        Ok(path)
    }

    /// Loads a checkpoint, refusing files written by another code version.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let cp: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("corrupt checkpoint {}: {e}", path.display())))?;
        if cp.code_version != code_version() {
            return Err(CliError::Config(format!(
                "checkpoint was written by {}, this is {}",
                cp.code_version,
                code_version()
            )));
        }
        Ok(cp)
    }
}
