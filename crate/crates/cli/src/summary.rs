use std::path::Path;
use std::time::Instant;

use aoisnn::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SUMMARY_FILE: &str = "run_summary.toml";

#[derive(Serialize)]
pub struct RunSummary {
    pub command: String,
    pub version: String,
    /// SHA-256 of the effective config, as TOML.
    pub config_hash: String,
    pub seed: u64,
    pub wall_clock_s: f64,
    pub outputs: Vec<String>,
}

impl RunSummary {
    pub fn new(command: &str, config_toml: &str, seed: u64, started: Instant) -> Self {
        RunSummary {
            command: command.into(),
            version: env!("AOISNN_GIT_VERSION").into(),
            config_hash: config_hash(config_toml),
            seed,
            wall_clock_s: started.elapsed().as_secs_f64(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SUMMARY_FILE);
        let text = toml::to_string(self).expect("summary serialises");
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}

pub fn config_hash(config_toml: &str) -> String {
    Sha256::digest(config_toml.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
