//! Run configuration: one JSON file describing a full training run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dhvt_core::model::ModelConfig;
use dhvt_core::tensor::Dtype;

use crate::data::DataConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Defaults mirror the published recipe at desk scale.
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
    /// Hard cap on optimizer steps; unset means epochs decide.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Stop as soon as train accuracy reaches this value.
    #[serde(default)]
    pub stop_at_train_accuracy: Option<f64>,
    /// Evaluate train accuracy every this many steps (default: per epoch).
    #[serde(default)]
    pub eval_every_steps: Option<usize>,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct AugmentConfig {
    /// Random horizontal flip.
    #[serde(default)]
    pub hflip: bool,
    /// Random crop after 4-pixel zero padding.
    #[serde(default)]
    pub crop_pad4: bool,
}

fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    16
}
fn default_base_lr() -> f64 {
    0.001
}
fn default_weight_decay() -> f64 {
    0.05
}
fn default_warmup_epochs() -> usize {
    5
}
fn default_dtype() -> Dtype {
    Dtype::F32
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("train_out")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let rc: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        rc.model.validate().map_err(CliError::Core)?;
        rc.validate()?;
        Ok(rc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(CliError::Config(
                "either epochs or max_steps must be positive".into(),
            ));
        }
        if let Some(acc) = self.stop_at_train_accuracy {
            if !(0.0..=1.0).contains(&acc) {
                return Err(CliError::Config(format!(
                    "stop_at_train_accuracy {acc} must be in [0,1]"
                )));
            }
        }
        Ok(())
    }
}
