use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use semtlc_core::agent::checkpoint::FORMAT_VERSION;
use semtlc_core::ObsMode;

use crate::config::RunConfig;

/// Provenance of one command run. Contains nothing that varies between
/// identical invocations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub checkpoint_format_version: u32,
    pub seeds: Vec<u64>,
    pub obs_mode: Option<ObsMode>,
    pub config_sha256: String,
    /// Greedy evaluation episodes per seed.
    pub evaluation_episodes: u32,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, seeds: &[u64], obs_mode: Option<ObsMode>) -> Self {
        Self {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format_version: FORMAT_VERSION,
            seeds: seeds.to_vec(),
            obs_mode,
            config_sha256: config.sha256(),
            evaluation_episodes: 1,
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
