use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use semtlc_core::agent::TrainConfig;
use semtlc_core::xai::FeatureSelection;
use semtlc_core::SimConfig;

/// Contents of a `--config` JSON file. Every section is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    /// Green duration of the fixed-time baseline, in steps.
    pub static_split_steps: u32,
    /// Semantic features the transmitter carries.
    pub features: FeatureSelection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            static_split_steps: 30,
            features: FeatureSelection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.static_split_steps < self.sim.min_green_steps {
            bail!(
                "static_split_steps {} is shorter than min_green_steps {}",
                self.static_split_steps,
                self.sim.min_green_steps
            );
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Step selection: `A..B` (half-open) or a comma-separated list.
pub fn parse_steps(s: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad step range `{s}`"))?;
        let b: u64 = b.trim().parse().with_context(|| format!("bad step range `{s}`"))?;
        if b <= a {
            bail!("empty step range `{s}`");
        }
        return Ok((a..b).collect());
    }
    let steps = s
        .split(',')
        .map(|v| v.trim().parse::<u64>().with_context(|| format!("bad step `{v}`")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if steps.is_empty() {
        bail!("no steps given");
    }
    Ok(steps)
}

pub fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse::<u64>().with_context(|| format!("bad seed `{v}`")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_takes_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"sim": {"arrival_prob": [0, 0, 0, 0]}}"#).unwrap();
        assert_eq!(c.sim.arrival_prob, [0.0; 4]);
        assert_eq!(c.sim.horizon_steps, 1800);
        assert_eq!(c.static_split_steps, 30);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.sim.horizon_steps = 10;
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }

    #[test]
    fn step_and_seed_lists() {
        assert_eq!(parse_steps("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_steps("7, 2").unwrap(), vec![7, 2]);
        assert!(parse_steps("5..5").is_err());
        assert_eq!(parse_seeds("0,1,2").unwrap(), vec![0, 1, 2]);
        assert!(parse_seeds("").is_err());
    }
}
