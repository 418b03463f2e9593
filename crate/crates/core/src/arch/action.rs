use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ArchPair, LayerRole, LayerSpec, NetRole, NetworkSpec};
use crate::error::{Error, Result};

/// One growth step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GrowthAction {
    GrowG { filter_size: u32, n_filters: u32 },
    GrowD { filter_size: u32, n_filters: u32 },
    /// Add a stage at twice the resolution to both networks.
    GrowBoth,
}

impl GrowthAction {
    pub fn is_grow_both(self) -> bool {
        matches!(self, GrowthAction::GrowBoth)
    }

    /// Network touched by a single-network action.
    pub fn network(self) -> Option<NetRole> {
        match self {
            GrowthAction::GrowG { .. } => Some(NetRole::G),
            GrowthAction::GrowD { .. } => Some(NetRole::D),
            GrowthAction::GrowBoth => None,
        }
    }
}

/// Compact codes: `G3x256`, `D7x32`, `B`.
impl fmt::Display for GrowthAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrowthAction::GrowG { filter_size, n_filters } => write!(f, "G{filter_size}x{n_filters}"),
            GrowthAction::GrowD { filter_size, n_filters } => write!(f, "D{filter_size}x{n_filters}"),
            GrowthAction::GrowBoth => f.write_str("B"),
        }
    }
}

impl FromStr for GrowthAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad growth action code {s:?}"));
        if s == "B" {
            return Ok(GrowthAction::GrowBoth);
        }
        let (net, rest) = s.split_at_checked(1).ok_or_else(bad)?;
        let (k, n) = rest.split_once('x').ok_or_else(bad)?;
        let filter_size: u32 = k.parse().map_err(|_| bad())?;
        let n_filters: u32 = n.parse().map_err(|_| bad())?;
        match net {
            "G" => Ok(GrowthAction::GrowG { filter_size, n_filters }),
            "D" => Ok(GrowthAction::GrowD { filter_size, n_filters }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for GrowthAction {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GrowthAction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Filter sizes and counts offered to single-network growth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub filter_sizes: Vec<u32>,
    pub filter_counts: Vec<u32>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        ActionSpace { filter_sizes: vec![3, 7], filter_counts: vec![32, 64, 128, 256, 512, 1024] }
    }
}

impl ActionSpace {
    /// The default space with every filter count divided by `divisor`
    /// (at least one filter). Keeps the 2x6 layout for small-scale runs.
    pub fn scaled(divisor: u32) -> Self {
        let mut s = Self::default();
        let d = divisor.max(1);
        for n in &mut s.filter_counts {
            *n = (*n / d).max(1);
        }
        s
    }

    /// All G actions, then all D actions, then `GrowBoth` if the pair is
    /// below `target_resolution`.
    pub fn enumerate(&self, pair: &ArchPair, target_resolution: u32) -> Vec<GrowthAction> {
        let mut out = Vec::with_capacity(2 * self.filter_sizes.len() * self.filter_counts.len() + 1);
        for &filter_size in &self.filter_sizes {
            for &n_filters in &self.filter_counts {
                out.push(GrowthAction::GrowG { filter_size, n_filters });
            }
        }
        for &filter_size in &self.filter_sizes {
            for &n_filters in &self.filter_counts {
                out.push(GrowthAction::GrowD { filter_size, n_filters });
            }
        }
        if pair.resolution() < target_resolution {
            out.push(GrowthAction::GrowBoth);
        }
        out
    }
}

pub fn enumerate_actions(pair: &ArchPair, target_resolution: u32) -> Vec<GrowthAction> {
    ActionSpace::default().enumerate(pair, target_resolution)
}

fn grown(net: &mut NetworkSpec, filter_size: u32, n_filters: u32) -> Result<LayerSpec> {
    if !matches!(filter_size, 3 | 7) || n_filters == 0 {
        return Err(Error::contract(format!("cannot grow a {filter_size}x{n_filters} layer")));
    }
    Ok(LayerSpec { id: net.take_id(), role: LayerRole::Grown, filter_size, n_filters })
}

fn new_stage_channels(net: &NetworkSpec, prev: u32) -> u32 {
    (prev / 2).max(net.min_stage_channels).max(1)
}

/// Returns the grown pair; `pair` is left untouched.
pub fn apply_action(pair: &ArchPair, action: GrowthAction, target_resolution: u32) -> Result<ArchPair> {
    pair.validate()?;
    let mut out = pair.clone();
    out.fading = action.is_grow_both();
    match action {
        GrowthAction::GrowG { filter_size, n_filters } => {
            let l = grown(&mut out.g, filter_size, n_filters)?;
            let top = out.g.top();
            let stage = &mut out.g.stages[top];
            let at = stage.len() - 2;
            stage.insert(at, l);
        }
        GrowthAction::GrowD { filter_size, n_filters } => {
            let l = grown(&mut out.d, filter_size, n_filters)?;
            let top = out.d.top();
            out.d.stages[top].insert(2, l);
        }
        GrowthAction::GrowBoth => {
            let res = pair.resolution();
            if res >= target_resolution {
                return Err(Error::contract(format!(
                    "cannot add a stage at {res}px: target resolution is {target_resolution}px"
                )));
            }
            let g = &mut out.g;
            let top = g.top();
            let prev = g.stages[top][g.stages[top].len() - 2].n_filters;
            let c = new_stage_channels(g, prev);
            let stage = vec![
                LayerSpec { id: g.take_id(), role: LayerRole::Base, filter_size: 3, n_filters: c },
                LayerSpec { id: g.take_id(), role: LayerRole::Anchor, filter_size: 3, n_filters: c },
                LayerSpec { id: g.take_id(), role: LayerRole::ToRgb, filter_size: 1, n_filters: super::IMAGE_CHANNELS },
            ];
            g.stages.push(stage);

            let d = &mut out.d;
            let below = d.stages[d.top()][0].n_filters;
            let c = new_stage_channels(d, below);
            let stage = vec![
                LayerSpec { id: d.take_id(), role: LayerRole::FromRgb, filter_size: 1, n_filters: c },
                LayerSpec { id: d.take_id(), role: LayerRole::Anchor, filter_size: 3, n_filters: c },
                LayerSpec { id: d.take_id(), role: LayerRole::Base, filter_size: 3, n_filters: below },
            ];
            d.stages.push(stage);
        }
    }
    Ok(out)
}

fn new_layers<'a>(parent: &NetworkSpec, child: &'a NetworkSpec) -> Vec<&'a LayerSpec> {
    child
        .stages
        .iter()
        .flatten()
        .filter(|l| !parent.stages.iter().flatten().any(|p| p.id == l.id))
        .collect()
}

/// Finds the action that turns `parent` into `child`.
///
/// `Ok(None)` means the two pairs are identical up to the fading flag.
pub fn derive_action(parent: &ArchPair, child: &ArchPair) -> Result<Option<GrowthAction>> {
    if parent.g == child.g && parent.d == child.d {
        return Ok(None);
    }
    let unreachable = || {
        Error::contract(format!(
            "child ({}px, {} G / {} D convs) is not one growth step from parent ({}px, {} G / {} D convs)",
            child.resolution(),
            child.g.conv_count(),
            child.d.conv_count(),
            parent.resolution(),
            parent.g.conv_count(),
            parent.d.conv_count()
        ))
    };
    let mut candidates = Vec::new();
    if child.stage_count() == parent.stage_count() + 1 {
        candidates.push(GrowthAction::GrowBoth);
    }
    if let [l] = new_layers(&parent.g, &child.g)[..] {
        candidates.push(GrowthAction::GrowG { filter_size: l.filter_size, n_filters: l.n_filters });
    }
    if let [l] = new_layers(&parent.d, &child.d)[..] {
        candidates.push(GrowthAction::GrowD { filter_size: l.filter_size, n_filters: l.n_filters });
    }
    for a in candidates {
        if let Ok(p) = apply_action(parent, a, u32::MAX) {
            if p.g == child.g && p.d == child.d {
                return Ok(Some(a));
            }
        }
    }
    Err(unreachable())
}
