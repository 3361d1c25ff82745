//! Run configuration shared by the command-line tool and the test suites.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("dropout must lie in [0, 1), got {0}")]
    Dropout(f64),
}

/// Files a run reads or writes. Unset entries fall back to built-in data
/// (registry, knowledge graph) or are simply not produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub data: Option<PathBuf>,
    /// Held-out split; without it `dev_fraction` of `data` is held out.
    pub dev: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines metrics log.
    pub metrics: Option<PathBuf>,
}

/// Every knob of a training or evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_halve_every: usize,
    pub beam: usize,
    pub max_nodes: usize,
    pub max_slots: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub dev_fraction: f64,
    /// Source tokens seen fewer times than this map to `<UNK>`.
    pub min_freq: usize,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            emb_dim: 128,
            hidden_dim: 512,
            dropout: 0.5,
            batch: 64,
            lr: 1e-3,
            weight_decay: 1e-5,
            lr_halve_every: 20,
            beam: 5,
            max_nodes: 50,
            max_slots: 10,
            epochs: 80,
            seed: 1,
            clip_norm: 5.0,
            eval_every: 1,
            dev_fraction: 0.2,
            min_freq: 1,
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sizes = [
            ("emb_dim", self.emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch", self.batch),
            ("beam", self.beam),
            ("max_nodes", self.max_nodes),
            ("max_slots", self.max_slots),
            ("epochs", self.epochs),
            ("eval_every", self.eval_every),
            ("min_freq", self.min_freq),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::NonPositive(name));
        }
        for (name, v) in [("lr", self.lr), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(ConfigError::NonPositive("weight_decay"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Dropout(self.dropout));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            max_slots: self.max_slots,
            max_nodes: self.max_nodes,
        }
    }

    /// Dev metrics during training use greedy decoding; `beam` applies to
    /// final evaluation.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            weight_decay: self.weight_decay,
            lr_halve_every: self.lr_halve_every,
            clip_norm: self.clip_norm,
            seed: self.seed,
            eval_every: self.eval_every,
            eval_beam: 1,
        }
    }
}
