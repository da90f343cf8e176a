//! Run manifests recorded next to each result file.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_name: String,
    pub config_path: String,
    /// SHA-256 of the configuration as run, after command-line overrides.
    pub config_sha256: String,
    pub base_seed: u64,
    pub trials: usize,
    pub threads: Option<usize>,
    pub harness_version: String,
    pub core_version: String,
    pub outputs: Vec<String>,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.to_toml_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, config_path: &Path, threads: Option<usize>) -> Self {
        RunManifest {
            schema_version: crate::config::SCHEMA_VERSION,
            command: command.to_string(),
            config_name: config.name.clone(),
            config_path: config_path.display().to_string(),
            config_sha256: config_hash(config),
            base_seed: config.base_seed,
            trials: config.trials,
            threads,
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: bifdoa_core::VERSION.to_string(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
