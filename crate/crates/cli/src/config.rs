//! TOML pipeline configuration. Every section is optional; command-line
//! flags override whatever is loaded here.

use std::path::{Path, PathBuf};

use satpm_core::dataset::SplitRatios;
use satpm_core::ingest::ExposurePolicy;
use satpm_core::models::ModelConfig;
use satpm_core::tiles::API_KEY_ENV;
use satpm_core::train::{OptimizerKind, OptimizerSpec, TrainOptions};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub zoom: Option<u32>,
    pub paths: Paths,
    pub split: SplitSection,
    pub ingest: IngestSection,
    pub model: ModelConfig,
    pub optimizer: OptimizerSection,
    pub training: TrainOptions,
    pub tiles: TileSection,
    pub synthetic: SyntheticSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub sites: PathBuf,
    /// Labelled sites (JSONL) produced by `ingest` and `synth`.
    pub labeled: PathBuf,
    pub cache_dir: PathBuf,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub leaderboard: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let work = Path::new("work");
        Self {
            sites: PathBuf::from("data/sites.csv"),
            labeled: work.join("labeled.jsonl"),
            cache_dir: work.join("tiles"),
            manifest: work.join("manifest.jsonl"),
            checkpoint: work.join("model.ipm"),
            history: work.join("history.jsonl"),
            leaderboard: work.join("leaderboard.jsonl"),
            reports: work.join("reports"),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train: 0.8, validation: 0.1, test: 0.1, seed: 0 }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios { train: self.train, validation: self.validation, test: self.test }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub policy: ExposurePolicy,
    pub exclude_pm10_derived: bool,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { policy: ExposurePolicy::PerYear, exclude_pm10_derived: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// `nadam` or `rmsprop`.
    pub name: String,
    pub learning_rate: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { name: "nadam".into(), learning_rate: 1e-3 }
    }
}

impl OptimizerSection {
    pub fn spec(&self) -> Result<OptimizerSpec, CliError> {
        let kind = OptimizerKind::from_name(&self.name)
            .ok_or_else(|| CliError::Config(format!("optimizer.name: unknown optimizer `{}`", self.name)))?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(CliError::Config("optimizer.learning_rate must be positive".into()));
        }
        Ok(OptimizerSpec { kind, learning_rate: self.learning_rate })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileSection {
    pub base_url: String,
    /// Prefer the environment variable; this exists for unattended hosts.
    pub api_key: Option<String>,
    pub size_px: u32,
    pub concurrency: usize,
    pub attempts: u32,
    pub timeout_secs: u64,
}

impl Default for TileSection {
    fn default() -> Self {
        Self {
            base_url: "https://maps.googleapis.com/maps/api/staticmap".into(),
            api_key: None,
            size_px: 256,
            concurrency: 4,
            attempts: 3,
            timeout_secs: 30,
        }
    }
}

impl TileSection {
    /// The environment variable wins over the config file.
    pub fn resolve_api_key(&self) -> Result<String, CliError> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .or_else(|| self.api_key.clone().filter(|k| !k.is_empty()))
            .ok_or_else(|| CliError::Config(format!("tiles.api_key: set {API_KEY_ENV} or tiles.api_key in the config")))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    /// Generate tiles locally instead of calling the tile service.
    pub enabled: bool,
    pub signal_max: f64,
    pub count: usize,
    pub seed: u64,
    pub size_px: u32,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self { enabled: false, signal_max: 436.44, count: 2000, seed: 0, size_px: 64 }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn zoom(&self) -> u32 {
        self.zoom.unwrap_or(13)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.split.ratios().validate().map_err(|e| CliError::Config(format!("split: {e}")))?;
        self.model.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.optimizer.spec()?;
        if self.training.batch_size == 0 || self.training.max_epochs == 0 {
            return Err(CliError::Config("training: batch_size and max_epochs must be positive".into()));
        }
        if !(self.synthetic.signal_max > 0.0) {
            return Err(CliError::Config("synthetic.signal_max must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            "zoom = 15\n[split]\nseed = 7\n[model]\nhead = \"decile10\"\n[optimizer]\nname = \"rmsprop\"\n",
        )
        .unwrap();
        assert_eq!(cfg.zoom(), 15);
        assert_eq!(cfg.split.seed, 7);
        assert_eq!(cfg.split.train, 0.8);
        assert_eq!(cfg.model.input_size, 64);
        assert_eq!(cfg.optimizer.spec().unwrap().kind.name(), "rmsprop");
        assert_eq!(cfg.training.max_epochs, 100);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[split]\nsed = 7\n").is_err());
    }

    #[test]
    fn bad_ratios_fail_validation() {
        let cfg: PipelineConfig = toml::from_str("[split]\ntrain = 0.9\n").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
