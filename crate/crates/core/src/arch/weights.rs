use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use super::{derive_action, ArchPair, LayerRole, NetRole, NetworkSpec};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Looks up `name` or reports which tensor is missing.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::contract(format!("weight set has no tensor {name:?}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> u64 {
        self.tensors.values().map(|t| t.numel() as u64).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Checks names and shapes against `spec`.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.param_shapes();
        if shapes.len() != self.len() {
            return Err(Error::contract(format!(
                "{} weight set has {} tensors, spec needs {}",
                spec.role.tag(),
                self.len(),
                shapes.len()
            )));
        }
        for (name, shape) in shapes {
            let t = self.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("weight_set", format!("{name}: {:?} vs spec {shape:?}", t.shape())));
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for WeightSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        WeightSet { tensors: iter.into_iter().collect() }
    }
}

/// Weights of a generator/discriminator pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairWeights {
    pub g: WeightSet,
    pub d: WeightSet,
}

impl PairWeights {
    pub fn check(&self, pair: &ArchPair) -> Result<()> {
        self.g.check(&pair.g)?;
        self.d.check(&pair.d)
    }
}

/// Layers whose output is not followed by a leaky ReLU get unit gain.
fn gain(spec: &NetworkSpec, name: &str) -> f64 {
    let linear_out = match spec.role {
        NetRole::G => spec
            .plan()
            .iter()
            .any(|pl| pl.spec.role == LayerRole::ToRgb && name.starts_with(&spec.layer_key(pl.stage, pl.spec.id))),
        NetRole::D => name.starts_with(&spec.dense_key()),
    };
    if linear_out {
        1.0
    } else {
        2.0
    }
}

fn init_network(spec: &NetworkSpec, seed: u64) -> WeightSet {
    spec.param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let t = if name.ends_with("/bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let std = libm::sqrt(gain(spec, &name) / fan_in as f64) as f32;
                let mut rng = rng_for(seed, &name);
                Tensor::from_fn(&shape, |_| {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    z * std
                })
            };
            (name, t)
        })
        .collect()
}

/// He-scaled normal weights and zero biases. Each tensor draws from its own
/// stream keyed by `(seed, name)`, so a layer's fresh initialization does
/// not depend on which other layers exist.
pub fn instantiate(pair: &ArchPair, seed: u64) -> PairWeights {
    PairWeights { g: init_network(&pair.g, seed), d: init_network(&pair.d, seed) }
}

/// Copies the overlapping hyper-rectangle of `src` into `dst`.
fn copy_overlap(dst: &mut Tensor, src: &Tensor) {
    let rank = dst.rank();
    if src.rank() != rank {
        return;
    }
    let ov: Vec<usize> = dst.shape().iter().zip(src.shape()).map(|(a, b)| *a.min(b)).collect();
    if ov.contains(&0) {
        return;
    }
    let strides = |shape: &[usize]| {
        let mut s = alloc::vec![1usize; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * shape[i + 1];
        }
        s
    };
    let (ds, ss) = (strides(dst.shape()), strides(src.shape()));
    let inner = ov[rank - 1];
    let outer: usize = ov[..rank - 1].iter().product();
    let mut idx = alloc::vec![0usize; rank.saturating_sub(1)];
    let sdata = src.data();
    let ddata = dst.data_mut();
    for _ in 0..outer {
        let (mut so, mut dof) = (0, 0);
        for (a, i) in idx.iter().enumerate() {
            so += i * ss[a];
            dof += i * ds[a];
        }
        ddata[dof..dof + inner].copy_from_slice(&sdata[so..so + inner]);
        for a in (0..idx.len()).rev() {
            idx[a] += 1;
            if idx[a] < ov[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Copies parent weights into `child_ws` by name.
///
/// Tensors whose shape changed because an inserted layer altered their
/// input channel count receive the overlapping slice; the rest of such a
/// tensor, and every new layer, keeps its fresh initialization.
pub fn inherit_weights(
    child: &ArchPair,
    child_ws: &mut PairWeights,
    parent: &ArchPair,
    parent_ws: &PairWeights,
) -> Result<()> {
    derive_action(parent, child)?;
    child_ws.check(child)?;
    parent_ws.check(parent)?;
    for (dst, src) in [(&mut child_ws.g, &parent_ws.g), (&mut child_ws.d, &parent_ws.d)] {
        for (name, t) in dst.iter_mut() {
            if let Some(p) = src.get(name) {
                if p.shape() == t.shape() {
                    t.data_mut().copy_from_slice(p.data());
                } else {
                    copy_overlap(t, p);
                }
            }
        }
    }
    Ok(())
}
