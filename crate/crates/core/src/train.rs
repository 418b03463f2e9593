//! WGAN training of one candidate pair.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchPair, PairWeights, WeightSet};
use crate::error::{Error, Result};
use crate::model::{self, Bound};
use crate::seed::rng_for;
use crate::tensor::{Adam, AdamState, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WganGp,
    /// Weight clipping at `CLIP` and no penalty.
    WganClip,
}

pub const CLIP: f32 = 0.01;

/// Floor inside the square root of the penalty's gradient norm.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_gp: f64,
    pub n_critic: u32,
    pub fade_in_fraction: f64,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 2000,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            lambda_gp: 10.0,
            n_critic: 1,
            fade_in_fraction: 0.5,
            loss_kind: LossKind::WganGp,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fade_in_fraction > 0.0 && self.fade_in_fraction <= 1.0) {
            return Err(Error::contract(format!("fade_in_fraction {} outside (0, 1]", self.fade_in_fraction)));
        }
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::contract(format!("lambda_gp {} is negative", self.lambda_gp)));
        }
        if self.batch_size == 0 || self.n_critic == 0 {
            return Err(Error::contract("batch_size and n_critic must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::contract("Adam needs lr > 0 and betas in [0, 1)"));
        }
        Ok(())
    }

    pub fn fade_iters(&self) -> u64 {
        libm::floor(self.fade_in_fraction * self.iters as f64) as u64
    }

    fn adam(&self) -> Adam {
        Adam { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: 1e-8 }
    }
}

/// `min(iter / fade_iters, 1)`; 1 when `fade_iters` is 0.
pub fn fade_in_alpha(iter: u64, fade_iters: u64) -> f64 {
    if fade_iters == 0 {
        return 1.0;
    }
    (iter as f64 / fade_iters as f64).min(1.0)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `mean(d_fake) - mean(d_real) + lambda_gp * mean((grad_norms - 1)^2)`.
pub fn wgan_gp_d_loss(d_real: &[f64], d_fake: &[f64], grad_norms: &[f64], lambda_gp: f64) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() || grad_norms.is_empty() {
        return Err(Error::contract("WGAN-GP loss of an empty batch"));
    }
    let pen: Vec<f64> = grad_norms.iter().map(|g| (g - 1.0) * (g - 1.0)).collect();
    Ok(mean(d_fake) - mean(d_real) + lambda_gp * mean(&pen))
}

/// `-mean(d_fake)`.
pub fn wgan_g_loss(d_fake: &[f64]) -> Result<f64> {
    if d_fake.is_empty() {
        return Err(Error::contract("generator loss of an empty batch"));
    }
    Ok(-mean(d_fake))
}

/// Recorded discriminator loss terms.
#[derive(Clone, Copy, Debug)]
pub struct DLossVars {
    pub loss: Var,
    pub d_real: Var,
    pub d_fake: Var,
    /// `[N]` gradient norms at the interpolates, when a penalty is used.
    pub grad_norms: Option<Var>,
}

/// `x_hat = u * real + (1 - u) * fake` with one `u` per sample.
pub fn interpolate<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>, u: &[f64]) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() || real.shape().first() != Some(&u.len()) {
        return Err(Error::shape(
            "interpolate",
            format!("real {:?}, fake {:?}, {} mixing weights", real.shape(), fake.shape(), u.len()),
        ));
    }
    let per = real.numel() / u.len().max(1);
    let (r, f) = (real.data(), fake.data());
    Ok(Tensor::from_fn(real.shape(), |i| {
        let w = T::from_f64(u[i / per]);
        w * r[i] + (T::ONE - w) * f[i]
    }))
}

/// Records the critic loss for one batch. With `lambda_gp = Some(l)` the
/// penalty `l * mean((||grad_x D(x_hat)|| - 1)^2)` is built by double
/// backprop so its gradient reaches D's parameters.
#[allow(clippy::too_many_arguments)]
pub fn d_loss_graph<T: Scalar>(
    graph: &mut Graph<T>,
    pair: &ArchPair,
    d_params: &Bound,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    u: &[f64],
    lambda_gp: Option<f64>,
    fade: Option<f64>,
) -> Result<DLossVars> {
    let rv = graph.constant(real.clone());
    let fv = graph.constant(fake.clone());
    let d_real = model::discriminator(graph, &pair.d, d_params, rv, fade)?.output;
    let d_fake = model::discriminator(graph, &pair.d, d_params, fv, fade)?.output;
    let mr = graph.mean(d_real);
    let mf = graph.mean(d_fake);
    let mut loss = graph.sub(mf, mr)?;
    let mut grad_norms = None;
    if let Some(lambda) = lambda_gp {
        let xh = graph.param(interpolate(real, fake, u)?);
        let dh = model::discriminator(graph, &pair.d, d_params, xh, fade)?.output;
        let s = graph.sum(dh);
        let gx = graph.input_gradient(s, xh)?;
        let sq = graph.mul(gx, gx)?;
        let ss = graph.row_sum(sq);
        let ss = graph.add_scalar(ss, NORM_EPS);
        let norms = graph.powf(ss, 0.5);
        let dev = graph.add_scalar(norms, -1.0);
        let dev2 = graph.mul(dev, dev)?;
        let pen = graph.mean(dev2);
        let pen = graph.scale(pen, lambda);
        loss = graph.add(loss, pen)?;
        grad_norms = Some(norms);
    }
    Ok(DLossVars { loss, d_real, d_fake, grad_norms })
}

/// One sampled point of the loss curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub iter: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub alpha: f64,
}

pub const LOSS_SAMPLE_EVERY: u64 = 100;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub losses: Vec<LossSample>,
    pub diverged: bool,
    pub iters_run: u64,
}

fn batch(data: &Tensor, idx: &[usize]) -> Result<Tensor> {
    data.gather_rows(idx)
}

fn adam_update(adam: &Adam, graph: &mut Graph<f32>, params: &Bound, ws: &mut WeightSet, st: &mut AdamState) -> Result<()> {
    let mut grads = Vec::with_capacity(params.len());
    for (name, v) in params.iter() {
        let g = graph
            .take_grad(v)
            .ok_or_else(|| Error::contract(format!("no gradient for {name}")))?;
        grads.push(g);
    }
    let mut ps: Vec<&mut Tensor> = ws.iter_mut().map(|(_, t)| t).collect();
    let gs: Vec<&Tensor> = grads.iter().collect();
    adam.step(&mut ps, &gs, st)
}

/// Trains `weights` for `cfg.iters` iterations of `n_critic` critic steps
/// and one generator step on batches drawn from `data` (`[M, 3, R, R]` at
/// the pair's resolution).
///
/// A non-finite loss or weight stops training and sets `diverged`; the
/// weights at that point are returned.
pub fn train_candidate(
    pair: &ArchPair,
    weights: PairWeights,
    data: &Tensor,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(PairWeights, TrainStats)> {
    cfg.validate()?;
    pair.validate()?;
    weights.check(pair)?;
    let r = pair.resolution() as usize;
    if data.rank() != 4 || data.shape()[1..] != [3, r, r] || data.shape()[0] == 0 {
        return Err(Error::shape("train_candidate", format!("dataset {:?} for a {r}px pair", data.shape())));
    }
    let mut w = weights;
    let mut stats = TrainStats::default();
    let m = data.shape()[0];
    let n = cfg.batch_size;
    let latent = pair.g.latent_dim.unwrap_or(0);
    let adam = cfg.adam();
    let (mut st_g, mut st_d) = (AdamState::new(), AdamState::new());
    let mut rng = rng_for(seed, "train");
    let fade_iters = cfg.fade_iters();
    let lambda = match cfg.loss_kind {
        LossKind::WganGp => Some(cfg.lambda_gp),
        LossKind::WganClip => None,
    };

    for it in 0..cfg.iters {
        let alpha = if pair.fading { fade_in_alpha(it, fade_iters) } else { 1.0 };
        let fade = pair.fading.then_some(alpha);
        let mut d_loss = 0.0;
        for _ in 0..cfg.n_critic {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
            let real = batch(data, &idx)?;
            let zs: u64 = rng.random();
            let z = model::latents(latent, n, zs, "z");
            let fake = model::generate(pair, &w.g, &z, alpha)?;
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut graph = Graph::<f32>::new();
            let params = Bound::bind(&mut graph, &w.d, true);
            let dl = d_loss_graph(&mut graph, pair, &params, &real, &fake, &u, lambda, fade)?;
            d_loss = graph.value(dl.loss).data()[0] as f64;
            if !d_loss.is_finite() {
                stats.diverged = true;
                break;
            }
            graph.backward(dl.loss)?;
            adam_update(&adam, &mut graph, &params, &mut w.d, &mut st_d)?;
            if lambda.is_none() {
                for (_, t) in w.d.iter_mut() {
                    for v in t.data_mut() {
                        *v = v.clamp(-CLIP, CLIP);
                    }
                }
            }
        }
        if stats.diverged {
            break;
        }

        let zs: u64 = rng.random();
        let z = model::latents(latent, n, zs, "z");
        let mut graph = Graph::<f32>::new();
        let gp = Bound::bind(&mut graph, &w.g, true);
        let dp = Bound::bind(&mut graph, &w.d, false);
        let zv = graph.constant(z);
        let fake = model::generator(&mut graph, &pair.g, &gp, zv, fade)?.output;
        let score = model::discriminator(&mut graph, &pair.d, &dp, fake, fade)?.output;
        let ms = graph.mean(score);
        let loss = graph.scale(ms, -1.0);
        let g_loss = graph.value(loss).data()[0] as f64;
        if !g_loss.is_finite() {
            stats.diverged = true;
            break;
        }
        graph.backward(loss)?;
        adam_update(&adam, &mut graph, &gp, &mut w.g, &mut st_g)?;
        stats.iters_run = it + 1;

        if !w.g.all_finite() || !w.d.all_finite() {
            stats.diverged = true;
            break;
        }
        if it % LOSS_SAMPLE_EVERY == 0 {
            stats.losses.push(LossSample { iter: it, d_loss, g_loss, alpha });
        }
    }
    Ok((w, stats))
}
