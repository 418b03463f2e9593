//! Forward passes of the generator and discriminator described by a
//! [`NetworkSpec`], recorded on a [`Graph`].
//!
//! G: pixelnorm(z) -> dense -> [C, d0, d0] -> per stage (upsample, convs)
//! -> toRGB -> tanh. Every hidden conv is followed by leaky ReLU and
//! pixelnorm.
//!
//! D: fromRGB at the input stage, the stage's convs, avgpool, then the
//! remaining stages down to d0 and a dense scalar head. Hidden convs use
//! leaky ReLU only.
//!
//! A fading pair blends the new top stage with the previous resolution's
//! path: G mixes `upsample(toRGB_prev(h_prev))` with the new toRGB output,
//! D mixes `fromRGB_prev(avgpool(x))` with the new stage's output.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::arch::{ArchPair, LayerRole, NetRole, NetworkSpec, WeightSet, IMAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Weight tensors placed on a graph, by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Places every tensor of `ws` on `graph`, as trainable leaves or as
    /// constants.
    pub fn bind<T: Scalar>(graph: &mut Graph<T>, ws: &WeightSet, trainable: bool) -> Bound {
        let vars = ws
            .iter()
            .map(|(name, t)| (name.clone(), graph.leaf(t.cast::<T>(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Binds tensors that already have element type `T`.
    pub fn bind_exact<T: Scalar>(
        graph: &mut Graph<T>,
        tensors: impl IntoIterator<Item = (String, Tensor<T>)>,
        trainable: bool,
    ) -> Bound {
        Bound { vars: tensors.into_iter().map(|(n, t)| (n, graph.leaf(t, trainable))).collect() }
    }

    /// Wraps vars that are already on a graph.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Bound {
        Bound { vars: vars.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::contract(format!("no bound weight {name:?}")))
    }

    /// `(name, var)` pairs in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(n, v)| (n, *v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// Output of a forward pass plus the post-activation output of every layer
/// that ran, keyed by layer name (`g/stage0/layer1`, `g/dense`, ...).
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    pub probes: Vec<(String, Var)>,
}

impl Forward {
    pub fn probe(&self, key: &str) -> Option<Var> {
        self.probes.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

struct Ctx<'a, T: Scalar> {
    graph: &'a mut Graph<T>,
    spec: &'a NetworkSpec,
    params: &'a Bound,
    probes: Vec<(String, Var)>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn conv(&mut self, stage: usize, id: u32, k: u32, x: Var) -> Result<Var> {
        let key = self.spec.layer_key(stage, id);
        let w = self.params.var(&format!("{key}/weight"))?;
        let b = self.params.var(&format!("{key}/bias"))?;
        self.graph.conv2d_bias(x, w, b, (k / 2) as usize)
    }

    fn probe(&mut self, key: String, v: Var) {
        self.probes.push((key, v));
    }

    fn dense(&mut self, x: Var) -> Result<Var> {
        let key = self.spec.dense_key();
        let w = self.params.var(&format!("{key}/weight"))?;
        let b = self.params.var(&format!("{key}/bias"))?;
        self.graph.dense(x, w, b)
    }
}

fn check_role(spec: &NetworkSpec, role: NetRole) -> Result<()> {
    if spec.role != role {
        return Err(Error::contract(format!("expected a {} spec, got {}", role.tag(), spec.role.tag())));
    }
    Ok(())
}

fn fade_alpha(spec: &NetworkSpec, fade: Option<f64>) -> Result<Option<f64>> {
    match fade {
        Some(a) if !(0.0..=1.0).contains(&a) => Err(Error::contract(format!("fade alpha {a} outside [0, 1]"))),
        Some(_) if spec.stages.len() < 2 => Err(Error::contract("fade-in needs at least two stages")),
        f => Ok(f),
    }
}

/// Generator forward pass. `z` is `[N, latent_dim]`; the result is
/// `[N, 3, R, R]` in `[-1, 1]`. `fade = Some(alpha)` blends the top stage
/// with the previous resolution's path.
pub fn generator<T: Scalar>(
    graph: &mut Graph<T>,
    spec: &NetworkSpec,
    params: &Bound,
    z: Var,
    fade: Option<f64>,
) -> Result<Forward> {
    check_role(spec, NetRole::G)?;
    let fade = fade_alpha(spec, fade)?;
    let zs = graph.shape(z).to_vec();
    let latent = spec.latent_dim.unwrap_or(0) as usize;
    if zs.len() != 2 || zs[1] != latent {
        return Err(Error::shape("generator", format!("latent {zs:?}, expected [N, {latent}]")));
    }
    let n = zs[0];
    let mut cx = Ctx { graph, spec, params, probes: Vec::new() };

    let h = cx.graph.reshape(z, &[n, latent, 1, 1])?;
    let h = cx.graph.pixelnorm(h)?;
    let h = cx.graph.reshape(h, &[n, latent])?;
    let h = cx.dense(h)?;
    let (c, d0) = (spec.base_channels as usize, spec.d0 as usize);
    let h = cx.graph.reshape(h, &[n, c, d0, d0])?;
    let h = cx.graph.leaky_relu(h);
    let mut h = cx.graph.pixelnorm(h)?;
    cx.probe(spec.dense_key(), h);

    let top = spec.top();
    let mut prev_out = None;
    for (s, stage) in spec.stages.iter().enumerate() {
        if s > 0 {
            prev_out = Some(h);
            h = cx.graph.upsample(h)?;
        }
        for l in stage.iter().filter(|l| l.role != LayerRole::ToRgb) {
            let y = cx.conv(s, l.id, l.filter_size, h)?;
            let y = cx.graph.leaky_relu(y);
            h = cx.graph.pixelnorm(y)?;
            cx.probe(spec.layer_key(s, l.id), h);
        }
    }

    let to_rgb = |spec: &NetworkSpec, s: usize| {
        spec.stages[s].iter().find(|l| l.role == LayerRole::ToRgb).copied().ok_or_else(|| {
            Error::contract(format!("g stage {s} has no toRGB layer"))
        })
    };
    let l = to_rgb(spec, top)?;
    let mut rgb = cx.conv(top, l.id, l.filter_size, h)?;
    if let (Some(alpha), Some(hp)) = (fade, prev_out) {
        let lp = to_rgb(spec, top - 1)?;
        let low = cx.conv(top - 1, lp.id, lp.filter_size, hp)?;
        let low = cx.graph.upsample(low)?;
        rgb = cx.graph.blend(low, rgb, alpha)?;
    }
    let output = cx.graph.tanh(rgb);
    let probes = cx.probes;
    Ok(Forward { output, probes })
}

/// Discriminator forward pass. `x` is `[N, 3, R, R]` at the spec's
/// resolution; the result is `[N, 1]`.
pub fn discriminator<T: Scalar>(
    graph: &mut Graph<T>,
    spec: &NetworkSpec,
    params: &Bound,
    x: Var,
    fade: Option<f64>,
) -> Result<Forward> {
    check_role(spec, NetRole::D)?;
    let fade = fade_alpha(spec, fade)?;
    let xs = graph.shape(x).to_vec();
    let r = spec.resolution() as usize;
    if xs.len() != 4 || xs[1] != IMAGE_CHANNELS as usize || xs[2] != r || xs[3] != r {
        return Err(Error::shape("discriminator", format!("input {xs:?}, expected [N, 3, {r}, {r}]")));
    }
    let n = xs[0];
    let mut cx = Ctx { graph, spec, params, probes: Vec::new() };

    let top = spec.top();
    let mut h = x;
    for s in (0..=top).rev() {
        let stage = &spec.stages[s];
        for l in stage {
            if l.role == LayerRole::FromRgb && s != top {
                continue;
            }
            let y = cx.conv(s, l.id, l.filter_size, h)?;
            h = cx.graph.leaky_relu(y);
            cx.probe(spec.layer_key(s, l.id), h);
        }
        if s > 0 {
            h = cx.graph.avgpool(h)?;
        }
        if s == top && s > 0 {
            if let Some(alpha) = fade {
                let lp = spec.stages[s - 1][0];
                let xd = cx.graph.avgpool(x)?;
                let low = cx.conv(s - 1, lp.id, lp.filter_size, xd)?;
                let low = cx.graph.leaky_relu(low);
                cx.probe(spec.layer_key(s - 1, lp.id), low);
                h = cx.graph.blend(low, h, alpha)?;
            }
        }
    }
    let flat = cx.graph.shape(h)[1..].iter().product();
    let h = cx.graph.reshape(h, &[n, flat])?;
    let output = cx.dense(h)?;
    let probes = cx.probes;
    Ok(Forward { output, probes })
}

fn fade_for(pair: &ArchPair, alpha: f64) -> Option<f64> {
    pair.fading.then_some(alpha)
}

/// Generates images without recording gradients. `alpha` only matters for
/// a fading pair.
pub fn generate(pair: &ArchPair, g_ws: &WeightSet, z: &Tensor, alpha: f64) -> Result<Tensor> {
    let mut graph = Graph::<f32>::new();
    graph.set_grad_enabled(false);
    let params = Bound::bind(&mut graph, g_ws, false);
    let zv = graph.constant(z.clone());
    let f = generator(&mut graph, &pair.g, &params, zv, fade_for(pair, alpha))?;
    Ok(graph.value(f.output).clone())
}

/// Scores images without recording gradients.
pub fn discriminate(pair: &ArchPair, d_ws: &WeightSet, x: &Tensor, alpha: f64) -> Result<Tensor> {
    let mut graph = Graph::<f32>::new();
    graph.set_grad_enabled(false);
    let params = Bound::bind(&mut graph, d_ws, false);
    let xv = graph.constant(x.clone());
    let f = discriminator(&mut graph, &pair.d, &params, xv, fade_for(pair, alpha))?;
    Ok(graph.value(f.output).clone())
}

/// Fresh standard-normal latents `[n, latent_dim]` from `(seed, key)`.
pub fn latents(latent_dim: u32, n: usize, seed: u64, key: &str) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = crate::seed::rng_for(seed, key);
    Tensor::from_fn(&[n, latent_dim as usize], |_| StandardNormal.sample(&mut rng))
}
