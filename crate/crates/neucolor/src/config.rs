//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use neucolor_core::fields::{Architecture, ModelConfig};
use neucolor_core::mesher::ColorMode;
use neucolor_core::renderer::RenderConfig;
use neucolor_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::read_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub resolution: usize,
    /// Defaults to the variant's natural mode (global, or intermediate for
    /// the baseline).
    pub mode: Option<ColorMode>,
    /// Half-width of the cube that is meshed.
    pub bound: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            mode: None,
            bound: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// A loss CSV row is kept every `log_every` iterations.
    pub log_every: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub extract: ExtractConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            log_every: 100,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            extract: ExtractConfig::default(),
        }
    }
}

impl RunConfig {
    /// Settings for the 64×64 synthetic scenes on a CPU: compact networks,
    /// 2000 iterations, 32 samples per ray.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.model.architecture = Architecture::compact();
        c.train = toy_train_config();
        c.log_every = 50;
        c
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string().trim().replace('\n', " "))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_string(path)?).map_err(|e| Error::format(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        total_iters: 2000,
        rays_per_batch: 256,
        images_per_batch: 8,
        warmup_iters: 100,
        lr_max: 2e-3,
        lr_min: 1e-4,
        checkpoint_every: 500,
        render: RenderConfig {
            n_coarse: 16,
            n_importance: 16,
            ..RenderConfig::default()
        },
        ..TrainConfig::default()
    }
}
