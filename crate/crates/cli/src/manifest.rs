use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use avqvc::config::RunConfig;
use serde::Serialize;

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn write(mut self, path: &Path) -> avqvc::Result<()> {
        self.finished_unix_ms = now_ms();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        avqvc::atomic_write(path, json.as_bytes())
    }
}
