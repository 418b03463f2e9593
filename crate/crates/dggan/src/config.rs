//! Flat JSON run configuration.

use std::path::{Path, PathBuf};

use dggan_core::arch::{ActionSpace, BaseConfig};
use dggan_core::search::SearchConfig;
use dggan_core::synth::{Family, SynthSpec};
use dggan_core::train::{LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Every knob of a run. Unknown keys are rejected; missing keys take the
/// desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d0: u32,
    pub target_resolution: u32,
    pub latent_dim: u32,
    pub base_channels: u32,
    pub min_stage_channels: u32,
    pub filter_sizes: Vec<u32>,
    pub filter_counts: Vec<u32>,

    pub k: usize,
    pub p: f64,
    pub max_layers: u32,
    pub initial: usize,
    /// Training iterations per candidate.
    pub iters: u64,
    pub final_multiplier: u32,

    pub lambda_gp: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub n_critic: u32,
    pub fade_in_fraction: f64,
    pub loss: LossKind,

    pub n_samples: usize,
    pub extractor_seed: u64,
    pub seed: u64,
    pub workers: usize,

    pub dataset_family: Family,
    pub dataset_count: usize,
    pub dataset_resolution: u32,
    pub dataset_seed: u64,
    pub dataset_channels: u8,
    /// Directory of PGM/PPM images; replaces the synthetic dataset.
    pub dataset_dir: Option<PathBuf>,

    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d0: 8,
            target_resolution: 16,
            latent_dim: 16,
            base_channels: 8,
            min_stage_channels: 4,
            filter_sizes: vec![3, 7],
            filter_counts: ActionSpace::scaled(32).filter_counts,
            k: 4,
            p: 0.5,
            max_layers: 6,
            initial: 1,
            iters: 1000,
            final_multiplier: 2,
            lambda_gp: 10.0,
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            batch_size: 8,
            n_critic: 1,
            fade_in_fraction: 0.5,
            loss: LossKind::WganGp,
            n_samples: 512,
            extractor_seed: 0,
            seed: 0,
            workers: 1,
            dataset_family: Family::GaussianBlobs,
            dataset_count: 2048,
            dataset_resolution: 16,
            dataset_seed: 0,
            dataset_channels: 3,
            dataset_dir: None,
            out_dir: None,
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {msg}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Checks every field, naming the first one that is out of range.
    pub fn validate(&self) -> Result<()> {
        let pow2 = |v: u32| v.is_power_of_two();
        if self.d0 < 4 || !pow2(self.d0) {
            return Err(field("d0", format!("must be a power of two >= 4, got {}", self.d0)));
        }
        let t = self.target_resolution;
        if t < self.d0 || t % self.d0 != 0 || !pow2(t / self.d0) {
            return Err(field("target_resolution", format!("{t} is not d0 * 2^s for d0 = {}", self.d0)));
        }
        if self.latent_dim == 0 {
            return Err(field("latent_dim", "must be positive"));
        }
        if self.base_channels == 0 || self.min_stage_channels == 0 {
            return Err(field("base_channels", "channel counts must be positive"));
        }
        if self.filter_sizes.is_empty() || self.filter_sizes.iter().any(|k| !matches!(k, 3 | 7)) {
            return Err(field("filter_sizes", format!("must be a non-empty subset of {{3, 7}}, got {:?}", self.filter_sizes)));
        }
        if self.filter_counts.is_empty() || self.filter_counts.contains(&0) {
            return Err(field("filter_counts", "must be a non-empty list of positive counts"));
        }
        if self.k == 0 {
            return Err(field("k", "must be at least 1"));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(field("p", format!("must be in (0, 1], got {}", self.p)));
        }
        if self.initial == 0 {
            return Err(field("initial", "must be at least 1"));
        }
        if self.n_samples < 2 {
            return Err(field("n_samples", "at least two samples are needed for a covariance"));
        }
        if self.workers == 0 {
            return Err(field("workers", "must be at least 1"));
        }
        if self.dataset_dir.is_none() {
            let r = self.dataset_resolution;
            if r < t || !pow2(r) {
                return Err(field("dataset_resolution", format!("must be a power of two >= target_resolution, got {r}")));
            }
            if !matches!(self.dataset_channels, 1 | 3) {
                return Err(field("dataset_channels", "must be 1 or 3"));
            }
        }
        self.train().validate().map_err(|e| field("training", e))?;
        Ok(())
    }

    pub fn base(&self) -> BaseConfig {
        BaseConfig {
            d0: self.d0,
            latent_dim: self.latent_dim,
            base_channels: self.base_channels,
            min_stage_channels: self.min_stage_channels,
        }
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            base: self.base(),
            actions: ActionSpace { filter_sizes: self.filter_sizes.clone(), filter_counts: self.filter_counts.clone() },
            k: self.k,
            p: self.p,
            max_layers: self.max_layers,
            target_resolution: self.target_resolution,
            final_multiplier: self.final_multiplier,
            initial: self.initial,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            iters: self.iters,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            lambda_gp: self.lambda_gp,
            n_critic: self.n_critic,
            fade_in_fraction: self.fade_in_fraction,
            loss_kind: self.loss,
        }
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            family: self.dataset_family,
            count: self.dataset_count,
            resolution: self.dataset_resolution,
            seed: self.dataset_seed,
            channels: self.dataset_channels,
        }
    }
}
