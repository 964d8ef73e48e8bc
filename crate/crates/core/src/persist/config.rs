use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, GenConfig};
use crate::metrics::Aggregation;
use crate::network::NetworkConfig;
use crate::training::{AdamConfig, LossConfig, TrainRun};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Train, validation and test fractions of a dataset directory.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fractions: [0.70, 0.05, 0.25], seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 0.5, aggregation: Aggregation::PerImage, batch_size: 8 }
    }
}

/// Every knob of a run in one document. Missing sections take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub train: TrainRun,
    pub split: SplitConfig,
    pub generator: GenConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config {path}: {msg}")]
    Parse { path: String, msg: String },
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigFileError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|msg| ConfigFileError::Parse { path: path.display().to_string(), msg })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
