//! Run configuration: one TOML file naming every hyperparameter.
//!
//! ```toml
//! seed = 7
//!
//! [thresholds]
//! tau_2d = 0.7
//! tau_3d = 0.3
//! tau_hung = -1.5
//!
//! [cost]
//! lambda_l1 = 1.0
//! lambda_iou = 2.0
//! lambda_d_focal = 1.0
//!
//! [consistency]
//! lambda_focal = 1.0
//!
//! [simulator.scene]
//! occlusion_rate = 0.3
//!
//! [ssl]
//! steps = 1000
//! seeds = [0, 1, 2]
//!
//! [paths]
//! input = "frames.json"
//! ```
//!
//! Every section and key is optional. Unknown keys are rejected. Relative
//! paths resolve against the directory holding the config file and must
//! exist when the file is loaded.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matchcost::{ConsistencyWeights, CostWeights};
use crate::pseudolabel::{TAU_2D, TAU_3D, TAU_HUNG};
use crate::simulator::SimConfig;
use crate::toytrain::{SslConfig, SupervisionConfig, UnlabeledBackground};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub tau_2d: f64,
    pub tau_3d: f64,
    pub tau_hung: f64,
    /// Drop detections at or below tau_2d / tau_3d before matching.
    pub prefilter: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_2d: TAU_2D,
            tau_3d: TAU_3D,
            tau_hung: TAU_HUNG,
            prefilter: false,
        }
    }
}

/// Training settings of the toy experiment. Thresholds and loss weights come
/// from their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslSection {
    pub lambda_u: f64,
    pub steps: usize,
    pub pretrain_steps: usize,
    pub lr: f64,
    pub batch_frames: usize,
    pub labeled_fraction: f64,
    pub ema_ramp_steps: usize,
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub supervision_3d: SupervisionConfig,
    pub supervision_2d: SupervisionConfig,
    pub unlabeled_background: UnlabeledBackground,
    pub train_frames: usize,
    pub eval_frames: usize,
    /// Training seeds; the experiment reports one row per seed.
    pub seeds: Vec<u64>,
}

impl Default for SslSection {
    fn default() -> Self {
        let c = SslConfig::default();
        Self {
            lambda_u: c.lambda_u,
            steps: c.steps,
            pretrain_steps: c.pretrain_steps,
            lr: c.lr,
            batch_frames: c.batch_frames,
            labeled_fraction: c.labeled_fraction,
            ema_ramp_steps: c.ema_ramp_steps,
            weak_noise: c.weak_noise,
            strong_noise: c.strong_noise,
            supervision_3d: c.supervision_3d,
            supervision_2d: c.supervision_2d,
            unlabeled_background: c.unlabeled_background,
            train_frames: 400,
            eval_frames: 300,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Default input frames file.
    pub input: Option<PathBuf>,
    /// Default directory for outputs.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub thresholds: Thresholds,
    pub cost: CostWeights,
    pub consistency: ConsistencyWeights,
    pub simulator: SimConfig,
    pub ssl: SslSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            thresholds: Thresholds::default(),
            cost: CostWeights::default(),
            consistency: ConsistencyWeights::default(),
            simulator: SimConfig::default(),
            ssl: SslSection::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("path {key} = {path} does not exist")]
    MissingPath { key: &'static str, path: String },
}

impl RunConfig {
    /// Parses and validates; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        for (key, p) in [("paths.input", &mut cfg.paths.input), ("paths.output_dir", &mut cfg.paths.output_dir)] {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
                if !path.exists() {
                    return Err(ConfigError::MissingPath {
                        key,
                        path: path.display().to_string(),
                    });
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.simulator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.ssl.seeds.is_empty() {
            return Err(ConfigError::Invalid("ssl.seeds is empty".into()));
        }
        if self.ssl.train_frames == 0 || self.ssl.eval_frames == 0 {
            return Err(ConfigError::Invalid("ssl.train_frames and ssl.eval_frames must be positive".into()));
        }
        self.ssl_config().validate().map_err(ConfigError::Invalid)
    }

    /// The trainer configuration with this file's thresholds and weights.
    pub fn ssl_config(&self) -> SslConfig {
        let s = &self.ssl;
        SslConfig {
            lambda_u: s.lambda_u,
            steps: s.steps,
            pretrain_steps: s.pretrain_steps,
            lr: s.lr,
            batch_frames: s.batch_frames,
            labeled_fraction: s.labeled_fraction,
            ema_ramp_steps: s.ema_ramp_steps,
            weak_noise: s.weak_noise,
            strong_noise: s.strong_noise,
            tau_2d: self.thresholds.tau_2d,
            tau_3d: self.thresholds.tau_3d,
            tau_hung: self.thresholds.tau_hung,
            cost: self.cost,
            consistency: self.consistency,
            supervision_3d: s.supervision_3d,
            supervision_2d: s.supervision_2d,
            unlabeled_background: s.unlabeled_background,
        }
    }
}
