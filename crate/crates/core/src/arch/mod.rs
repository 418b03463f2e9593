//! Growable generator/discriminator genomes and the growth action space.
//!
//! A network is a list of resolution stages; stage `s` runs at
//! `d0 * 2^s` pixels. The generator grows new convolutions just before the
//! last convolution of its highest-resolution stage, the discriminator just
//! after the first convolution of its highest-resolution stage, and both
//! networks gain a stage together when the resolution doubles.

mod action;
mod weights;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use action::{apply_action, derive_action, enumerate_actions, ActionSpace, GrowthAction};
pub use weights::{inherit_weights, instantiate, PairWeights, WeightSet};

use crate::error::{Error, Result};

/// Image channels produced by G and consumed by D.
pub const IMAGE_CHANNELS: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetRole {
    G,
    D,
}

impl NetRole {
    pub fn tag(self) -> &'static str {
        match self {
            NetRole::G => "g",
            NetRole::D => "d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Base,
    /// Growth anchor: G's last conv of a stage, D's first conv of a stage.
    Anchor,
    Grown,
    ToRgb,
    FromRgb,
}

/// One convolution of a stage. `id` is unique within its network and never
/// reused, so weight names stay stable when layers are inserted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: u32,
    pub role: LayerRole,
    pub filter_size: u32,
    pub n_filters: u32,
}

/// A layer together with its input channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlannedLayer {
    pub stage: usize,
    pub spec: LayerSpec,
    pub c_in: u32,
}

impl PlannedLayer {
    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.spec.filter_size as usize;
        [self.spec.n_filters as usize, self.c_in as usize, k, k]
    }

    pub fn param_count(&self) -> u64 {
        conv_param_count(self.spec.filter_size, self.c_in, self.spec.n_filters)
    }
}

/// `n_filters * (k*k*c_in + 1)`.
pub fn conv_param_count(filter_size: u32, c_in: u32, n_filters: u32) -> u64 {
    let k = filter_size as u64;
    n_filters as u64 * (k * k * c_in as u64 + 1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: NetRole,
    /// Base resolution in pixels.
    pub d0: u32,
    /// Latent vector length; generator only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<u32>,
    pub base_channels: u32,
    /// Lower bound for the channel count of a newly added stage.
    pub min_stage_channels: u32,
    pub stages: Vec<Vec<LayerSpec>>,
    pub next_id: u32,
}

/// Shape parameters of the base pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub d0: u32,
    pub latent_dim: u32,
    pub base_channels: u32,
    pub min_stage_channels: u32,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig { d0: 8, latent_dim: 128, base_channels: 128, min_stage_channels: 32 }
    }
}

impl NetworkSpec {
    /// Index of the stage that talks to images (G's output, D's input).
    pub fn top(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn resolution(&self) -> u32 {
        self.d0 << self.top()
    }

    pub fn stage_resolution(&self, stage: usize) -> u32 {
        self.d0 << stage
    }

    pub fn conv_count(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    fn take_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Channel count entering the dense head (D) or leaving it (G).
    pub fn dense_channels(&self) -> u32 {
        match self.role {
            NetRole::G => self.base_channels,
            NetRole::D => self.stages[0].last().map(|l| l.n_filters).unwrap_or(0),
        }
    }

    /// `(out_features, in_features)` of the dense layer.
    pub fn dense_shape(&self) -> [usize; 2] {
        let flat = (self.dense_channels() * self.d0 * self.d0) as usize;
        match self.role {
            NetRole::G => [flat, self.latent_dim.unwrap_or(0) as usize],
            NetRole::D => [1, flat],
        }
    }

    /// Every conv layer with its input channel count, stage by stage.
    ///
    /// G chains stage 0 upward from the dense output; each stage's `ToRgb`
    /// reads the stage output without changing it. D chains each stage from
    /// its `FromRgb` layer; a stage's last layer feeds the stage below.
    pub fn plan(&self) -> Vec<PlannedLayer> {
        let mut out = Vec::with_capacity(self.conv_count());
        match self.role {
            NetRole::G => {
                let mut flow = self.base_channels;
                for (s, stage) in self.stages.iter().enumerate() {
                    for l in stage {
                        match l.role {
                            LayerRole::ToRgb => out.push(PlannedLayer { stage: s, spec: *l, c_in: flow }),
                            _ => {
                                out.push(PlannedLayer { stage: s, spec: *l, c_in: flow });
                                flow = l.n_filters;
                            }
                        }
                    }
                }
            }
            NetRole::D => {
                for (s, stage) in self.stages.iter().enumerate() {
                    let mut flow = IMAGE_CHANNELS;
                    for l in stage {
                        out.push(PlannedLayer { stage: s, spec: *l, c_in: flow });
                        flow = l.n_filters;
                    }
                }
            }
        }
        out
    }

    /// Weight name prefix of a conv layer.
    pub fn layer_key(&self, stage: usize, id: u32) -> String {
        format!("{}/stage{stage}/layer{id}", self.role.tag())
    }

    pub fn dense_key(&self) -> String {
        format!("{}/dense", self.role.tag())
    }

    /// `(name, shape)` of every parameter tensor, in plan order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let [o, i] = self.dense_shape();
        let dk = self.dense_key();
        out.push((format!("{dk}/weight"), vec![o, i]));
        out.push((format!("{dk}/bias"), vec![o]));
        for pl in self.plan() {
            let key = self.layer_key(pl.stage, pl.spec.id);
            out.push((format!("{key}/weight"), pl.weight_shape().to_vec()));
            out.push((format!("{key}/bias"), vec![pl.spec.n_filters as usize]));
        }
        out
    }

    /// Parameter count: `n_filters * (k*k*c_in + 1)` per conv plus the dense
    /// layer, with `c_in` propagated through the channel plan.
    pub fn param_count(&self) -> u64 {
        let [o, i] = self.dense_shape();
        let dense = (o * i + o) as u64;
        dense + self.plan().iter().map(PlannedLayer::param_count).sum::<u64>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::contract(format!("invalid {} spec: {why}", self.role.tag())));
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        if self.d0 < 1 || self.base_channels == 0 {
            return bad("zero base resolution or channels".into());
        }
        if (self.role == NetRole::G) != self.latent_dim.is_some() {
            return bad("latent_dim must be set exactly for the generator".into());
        }
        let mut ids = BTreeSet::new();
        for (s, stage) in self.stages.iter().enumerate() {
            for l in stage {
                if !ids.insert(l.id) || l.id >= self.next_id {
                    return bad(format!("layer id {} reused or beyond next_id", l.id));
                }
                if l.filter_size % 2 == 0 || l.n_filters == 0 {
                    return bad(format!("layer {} has filter {}x{}", l.id, l.filter_size, l.n_filters));
                }
                if l.role == LayerRole::Grown && !matches!(l.filter_size, 3 | 7) {
                    return bad(format!("grown layer {} has filter size {}", l.id, l.filter_size));
                }
            }
            let roles: Vec<LayerRole> = stage.iter().map(|l| l.role).collect();
            let anchors = roles.iter().filter(|r| **r == LayerRole::Anchor).count();
            let ok = match self.role {
                NetRole::G => {
                    roles.len() >= 3
                        && roles[roles.len() - 1] == LayerRole::ToRgb
                        && roles[roles.len() - 2] == LayerRole::Anchor
                        && roles[0] == LayerRole::Base
                        && stage.last().map(|l| l.n_filters) == Some(IMAGE_CHANNELS)
                }
                NetRole::D => {
                    roles.len() >= 3
                        && roles[0] == LayerRole::FromRgb
                        && roles[1] == LayerRole::Anchor
                        && roles[roles.len() - 1] == LayerRole::Base
                }
            };
            if !ok || anchors != 1 {
                return bad(format!("stage {s} layout {roles:?}"));
            }
            if !roles[1..roles.len() - 1].iter().all(|r| {
                matches!(r, LayerRole::Grown | LayerRole::Anchor)
            }) {
                return bad(format!("stage {s} has misplaced layers {roles:?}"));
            }
        }
        if self.role == NetRole::D {
            for s in 1..self.stages.len() {
                let below = self.stages[s - 1][0].n_filters;
                let out = self.stages[s].last().map(|l| l.n_filters);
                if out != Some(below) {
                    return bad(format!("stage {s} emits {out:?} channels, stage {} expects {below}", s - 1));
                }
            }
        }
        Ok(())
    }
}

/// A generator/discriminator pair at a common resolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchPair {
    pub g: NetworkSpec,
    pub d: NetworkSpec,
    /// Set when the top stage was just added and trains under the fade-in
    /// schedule.
    #[serde(default)]
    pub fading: bool,
}

impl ArchPair {
    /// The minimal base pair at `d0`:
    /// G: dense, conv3x3, anchor conv3x3, toRGB 1x1;
    /// D: fromRGB 1x1, anchor conv3x3, conv3x3, dense.
    pub fn base(cfg: BaseConfig) -> Self {
        let c = cfg.base_channels;
        let layer = |id, role, filter_size, n_filters| LayerSpec { id, role, filter_size, n_filters };
        let g = NetworkSpec {
            role: NetRole::G,
            d0: cfg.d0,
            latent_dim: Some(cfg.latent_dim),
            base_channels: c,
            min_stage_channels: cfg.min_stage_channels,
            stages: vec![vec![
                layer(0, LayerRole::Base, 3, c),
                layer(1, LayerRole::Anchor, 3, c),
                layer(2, LayerRole::ToRgb, 1, IMAGE_CHANNELS),
            ]],
            next_id: 3,
        };
        let d = NetworkSpec {
            role: NetRole::D,
            d0: cfg.d0,
            latent_dim: None,
            base_channels: c,
            min_stage_channels: cfg.min_stage_channels,
            stages: vec![vec![
                layer(0, LayerRole::FromRgb, 1, c),
                layer(1, LayerRole::Anchor, 3, c),
                layer(2, LayerRole::Base, 3, c),
            ]],
            next_id: 3,
        };
        ArchPair { g, d, fading: false }
    }

    pub fn resolution(&self) -> u32 {
        self.g.resolution()
    }

    pub fn stage_count(&self) -> usize {
        self.g.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.g.validate()?;
        self.d.validate()?;
        if self.g.role != NetRole::G || self.d.role != NetRole::D {
            return Err(Error::contract("pair roles must be (G, D)"));
        }
        if self.g.stages.len() != self.d.stages.len() || self.g.d0 != self.d.d0 {
            return Err(Error::contract(format!(
                "G has {} stages at d0={}, D has {} at d0={}",
                self.g.stages.len(),
                self.g.d0,
                self.d.stages.len(),
                self.d.d0
            )));
        }
        if self.fading && self.stage_count() < 2 {
            return Err(Error::contract("a single-stage pair cannot fade in"));
        }
        Ok(())
    }

    pub fn g_params(&self) -> u64 {
        self.g.param_count()
    }

    pub fn d_params(&self) -> u64 {
        self.d.param_count()
    }
}

/// Generator-to-discriminator parameter ratio. Never clamped.
pub fn g2d_ratio(pair: &ArchPair) -> f64 {
    pair.g_params() as f64 / pair.d_params() as f64
}
