//! Run configuration: TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use botstoi::audio::config_digest;
use botstoi::corruption::ChainPolicy;
use botstoi::features::FeatureKind;
use botstoi::harness::TrainConfig;
use botstoi::stoi::ScreenThresholds;
use serde::{Deserialize, Serialize};

use crate::Usage;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub clean: Option<PathBuf>,
    pub noise: Option<PathBuf>,
    pub rirs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub thresholds: ScreenThresholds,
}

/// Everything that determines a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker cap. Like `paths`, it does not change results and is left
    /// out of the hash.
    pub jobs: usize,
    pub paths: Paths,
    pub screen: ScreenConfig,
    pub policy: ChainPolicy,
    /// Degraded versions produced per clean file.
    pub variants: usize,
    pub feature_kind: FeatureKind,
    pub folds: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            paths: Paths::default(),
            screen: ScreenConfig::default(),
            policy: ChainPolicy::default(),
            variants: 1,
            feature_kind: FeatureKind::Ps1,
            folds: 5,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text =
            std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
        Ok(config)
    }

    /// Digest of the configuration without paths and worker count.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self {
            jobs: 0,
            paths: Paths::default(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).context("serialising configuration")?;
        Ok(config_digest(&json))
    }
}

/// Provenance block written next to every artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(Self {
            tool: format!("botstoi {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            seed: config.seed,
            config_hash: config.hash()?,
            config: config.clone(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
