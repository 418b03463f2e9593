//! Central finite differences at f64 against the tape's gradients.

#![allow(dead_code)]

use dggan_core::arch::{apply_action, instantiate, ArchPair, BaseConfig, GrowthAction};
use dggan_core::model::{self, Bound};
use dggan_core::train::{d_loss_graph, interpolate};
use dggan_core::{Error, Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
pub const INSTANCES: usize = 20;
const MAX_COORDS: usize = 48;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

fn weighting(i: usize) -> f64 {
    (1.3 * i as f64 + 0.7).sin() + 0.5
}

/// `sum(out * r)` for a fixed pattern `r`, so every output element matters.
fn scalar_loss(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let r = g.constant(Tensor::from_fn(&shape, weighting));
    let m = g.mul(out, r)?;
    Ok(g.sum(m))
}

fn eval(case: &Case, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let l = scalar_loss(&mut g, out).unwrap();
    g.value(l).data()[0]
}

fn analytic(case: &Case, inputs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let l = scalar_loss(&mut g, out).unwrap();
    grads_or_zero(&mut g, l, &vars, false)
}

fn grads_or_zero(g: &mut Graph<f64>, l: Var, vars: &[Var], create: bool) -> Vec<Tensor<f64>> {
    vars.iter()
        .map(|v| match g.grad_of(l, &[*v], create) {
            Ok(gv) => g.value(gv[0]).clone(),
            Err(Error::Contract(_)) => Tensor::zeros(g.shape(*v)),
            Err(e) => panic!("{e}"),
        })
        .collect()
}

fn coords(numel: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if numel <= MAX_COORDS {
        (0..numel).collect()
    } else {
        (0..MAX_COORDS).map(|_| rng.random_range(0..numel)).collect()
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error of first-order gradients over all inputs.
fn first_order(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let grads = analytic(case, &case.inputs);
    let mut worst: f64 = 0.0;
    for (j, t) in case.inputs.iter().enumerate() {
        let idx = coords(t.numel(), rng);
        let mut num = Vec::with_capacity(idx.len());
        for &i in &idx {
            let mut plus = case.inputs.clone();
            plus[j].data_mut()[i] += H;
            let mut minus = case.inputs.clone();
            minus[j].data_mut()[i] -= H;
            num.push((eval(case, &plus) - eval(case, &minus)) / (2.0 * H));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| grads[j].data()[i]).collect();
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

/// Gradient of `sum_j <grad_j, v_j>` through the recorded backward pass
/// against finite differences of the first-order gradients.
fn second_order(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let dirs: Vec<Tensor<f64>> =
        case.inputs.iter().map(|t| Tensor::from_fn(t.shape(), |_| rng.random_range(-1.0..1.0))).collect();
    let directional = |inputs: &[Tensor<f64>]| -> f64 {
        analytic(case, inputs).iter().zip(&dirs).map(|(g, v)| g.data().iter().zip(v.data()).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let l = scalar_loss(&mut g, out).unwrap();
    let mut s: Option<Var> = None;
    for (v, d) in vars.iter().zip(&dirs) {
        let Ok(gv) = g.grad_of(l, &[*v], true) else { continue };
        let dv = g.constant(d.clone());
        let m = g.mul(gv[0], dv).unwrap();
        let t = g.sum(m);
        s = Some(match s {
            Some(acc) => g.add(acc, t).unwrap(),
            None => t,
        });
    }
    let hv = match s {
        Some(s) => grads_or_zero(&mut g, s, &vars, false),
        None => case.inputs.iter().map(|t| Tensor::zeros(t.shape())).collect(),
    };
    let mut worst: f64 = 0.0;
    for (j, t) in case.inputs.iter().enumerate() {
        let idx = coords(t.numel(), rng);
        let mut num = Vec::with_capacity(idx.len());
        for &i in &idx {
            let mut plus = case.inputs.clone();
            plus[j].data_mut()[i] += H;
            let mut minus = case.inputs.clone();
            minus[j].data_mut()[i] -= H;
            num.push((directional(&plus) - directional(&minus)) / (2.0 * H));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| hv[j].data()[i]).collect();
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so kinks stay out of the stencil.
fn rand_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn nchw(rng: &mut ChaCha8Rng, even: bool) -> [usize; 4] {
    let side = |rng: &mut ChaCha8Rng| if even { 2 * rng.random_range(1..4) } else { rng.random_range(2..6) };
    [rng.random_range(1..4), rng.random_range(1..4), side(rng), side(rng)]
}

fn make_case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let s = nchw(rng, false);
    match op {
        "conv2d" => {
            let k = [1, 3][rng.random_range(0..2)];
            let pad = if rng.random_bool(0.5) { k / 2 } else { 0 };
            let s = [s[0], s[1], s[2].max(k), s[3].max(k)];
            let o = rng.random_range(1..4);
            Case { inputs: vec![rand_t(rng, &s), rand_t(rng, &[o, s[1], k, k])], build: Box::new(move |g, v| g.conv2d(v[0], v[1], pad)) }
        }
        "conv2d_weight_grad" => {
            let k = [1, 3][rng.random_range(0..2)];
            let pad = k / 2;
            let o = rng.random_range(1..4);
            Case {
                inputs: vec![rand_t(rng, &s), rand_t(rng, &[s[0], o, s[2], s[3]])],
                build: Box::new(move |g, v| g.conv2d_weight_grad(v[0], v[1], k, pad)),
            }
        }
        "conv2d_bias" => {
            let o = rng.random_range(1..4);
            Case {
                inputs: vec![rand_t(rng, &s), rand_t(rng, &[o, s[1], 3, 3]), rand_t(rng, &[o])],
                build: Box::new(|g, v| g.conv2d_bias(v[0], v[1], v[2], 1)),
            }
        }
        "flip_transpose" => {
            let k = [1, 3, 5][rng.random_range(0..3)];
            Case { inputs: vec![rand_t(rng, &[s[0], s[1], k, k])], build: Box::new(|g, v| g.flip_transpose(v[0])) }
        }
        "broadcast_channel" => {
            Case { inputs: vec![rand_t(rng, &[s[1]])], build: Box::new(move |g, v| g.broadcast_channel(v[0], &s)) }
        }
        "add_bias" => Case {
            inputs: vec![rand_t(rng, &s), rand_t(rng, &[s[1]])],
            build: Box::new(|g, v| g.add_bias(v[0], v[1])),
        },
        "channel_sum" => Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| g.channel_sum(v[0])) },
        "channel_sum_keep" => Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| g.channel_sum_keep(v[0])) },
        "expand_channels" => {
            let c = rng.random_range(1..5);
            Case { inputs: vec![rand_t(rng, &[s[0], 1, s[2], s[3]])], build: Box::new(move |g, v| g.expand_channels(v[0], c)) }
        }
        "row_sum" => Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| Ok(g.row_sum(v[0]))) },
        "expand_rows" => Case { inputs: vec![rand_t(rng, &[s[0]])], build: Box::new(move |g, v| g.expand_rows(v[0], &s)) },
        "sum" => Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| Ok(g.sum(v[0]))) },
        "mean" => Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| Ok(g.mean(v[0]))) },
        "broadcast_scalar" => {
            Case { inputs: vec![rand_t(rng, &[1])], build: Box::new(move |g, v| g.broadcast_scalar(v[0], &s)) }
        }
        "add" => Case { inputs: vec![rand_t(rng, &s), rand_t(rng, &s)], build: Box::new(|g, v| g.add(v[0], v[1])) },
        "sub" => Case { inputs: vec![rand_t(rng, &s), rand_t(rng, &s)], build: Box::new(|g, v| g.sub(v[0], v[1])) },
        "mul" => Case { inputs: vec![rand_t(rng, &s), rand_t(rng, &s)], build: Box::new(|g, v| g.mul(v[0], v[1])) },
        "scale" => {
            let c = rng.random_range(-3.0..3.0);
            Case { inputs: vec![rand_t(rng, &s)], build: Box::new(move |g, v| Ok(g.scale(v[0], c))) }
        }
        "add_scalar" => {
            let c = rng.random_range(-3.0..3.0);
            Case { inputs: vec![rand_t(rng, &s)], build: Box::new(move |g, v| Ok(g.add_scalar(v[0], c))) }
        }
        "powf" => {
            let p = [-0.5, 1.5, 2.0, 3.0][rng.random_range(0..4)];
            let x = Tensor::from_fn(&s, |_| rng.random_range(0.5..2.0));
            Case { inputs: vec![x], build: Box::new(move |g, v| Ok(g.powf(v[0], p))) }
        }
        "leaky_relu" => Case { inputs: vec![rand_off_zero(rng, &s)], build: Box::new(|g, v| Ok(g.leaky_relu(v[0]))) },
        "tanh" => Case { inputs: vec![rand_t(rng, &s).map(|x| 2.0 * x)], build: Box::new(|g, v| Ok(g.tanh(v[0]))) },
        "upsample" => Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| g.upsample(v[0])) },
        "avgpool" => {
            let s = nchw(rng, true);
            Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| g.avgpool(v[0])) }
        }
        "blend" => {
            let a = rng.random_range(0.0..=1.0);
            Case { inputs: vec![rand_t(rng, &s), rand_t(rng, &s)], build: Box::new(move |g, v| g.blend(v[0], v[1], a)) }
        }
        "linear" | "dense" | "matmul" | "matmul_tn" => {
            let (n, i, o) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..5));
            match op {
                "linear" => Case { inputs: vec![rand_t(rng, &[n, i]), rand_t(rng, &[o, i])], build: Box::new(|g, v| g.linear(v[0], v[1])) },
                "dense" => Case {
                    inputs: vec![rand_t(rng, &[n, i]), rand_t(rng, &[o, i]), rand_t(rng, &[o])],
                    build: Box::new(|g, v| g.dense(v[0], v[1], v[2])),
                },
                "matmul" => Case { inputs: vec![rand_t(rng, &[n, i]), rand_t(rng, &[i, o])], build: Box::new(|g, v| g.matmul(v[0], v[1])) },
                _ => Case { inputs: vec![rand_t(rng, &[i, n]), rand_t(rng, &[i, o])], build: Box::new(|g, v| g.matmul_tn(v[0], v[1])) },
            }
        }
        "reshape" => {
            let total: usize = s.iter().product();
            Case { inputs: vec![rand_t(rng, &s)], build: Box::new(move |g, v| g.reshape(v[0], &[total])) }
        }
        "pixelnorm" => {
            // with one channel the output is sign(x) and the gradient vanishes
            let s = [s[0], s[1] + 1, s[2], s[3]];
            Case { inputs: vec![rand_t(rng, &s)], build: Box::new(|g, v| g.pixelnorm(v[0])) }
        }
        _ => unreachable!("{op}"),
    }
}

const OPS: &[&str] = &[
    "conv2d",
    "conv2d_weight_grad",
    "conv2d_bias",
    "flip_transpose",
    "broadcast_channel",
    "add_bias",
    "channel_sum",
    "channel_sum_keep",
    "expand_channels",
    "row_sum",
    "expand_rows",
    "sum",
    "mean",
    "broadcast_scalar",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "powf",
    "leaky_relu",
    "tanh",
    "upsample",
    "avgpool",
    "blend",
    "linear",
    "dense",
    "matmul",
    "matmul_tn",
    "reshape",
    "pixelnorm",
];

/// Worst (first order, second order) relative error per op.
pub fn op_errors() -> Vec<(&'static str, f64, f64)> {
    let mut out = Vec::new();
    for (k, op) in OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let mut worst1: f64 = 0.0;
        let mut worst2: f64 = 0.0;
        for _ in 0..INSTANCES {
            let case = make_case(op, &mut rng);
            worst1 = worst1.max(first_order(&case, &mut rng));
            worst2 = worst2.max(second_order(&case, &mut rng));
        }
        out.push((*op, worst1, worst2));
    }
    out
}

fn tiny_pairs() -> Vec<ArchPair> {
    let base = ArchPair::base(BaseConfig { d0: 4, latent_dim: 3, base_channels: 4, min_stage_channels: 2 });
    let grow_d = apply_action(&base, GrowthAction::GrowD { filter_size: 3, n_filters: 2 }, 8).unwrap();
    let both = apply_action(&base, GrowthAction::GrowBoth, 8).unwrap();
    let both_g = apply_action(&both, GrowthAction::GrowG { filter_size: 3, n_filters: 3 }, 8).unwrap();
    let both_d7 = apply_action(&both, GrowthAction::GrowD { filter_size: 7, n_filters: 2 }, 8).unwrap();
    vec![base, grow_d, both, both_g, both_d7]
}

/// Relative error of d(loss)/d(D params) for one random instance.
fn d_loss_check(pair: &ArchPair, seed: u64, lambda: Option<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let w = instantiate(pair, seed);
    let params: Vec<(String, Tensor<f64>)> = w.d.iter().map(|(n, t)| (n.clone(), t.cast::<f64>())).collect();
    let r = pair.resolution() as usize;
    let n = rng.random_range(2..4);
    let real = rand_t(rng, &[n, 3, r, r]);
    let fake = rand_t(rng, &[n, 3, r, r]);
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let fade = pair.fading.then(|| rng.random_range(0.0..=1.0));
    assert!(interpolate(&real, &fake, &u).is_ok());

    let loss_at = |ps: &[(String, Tensor<f64>)], grads: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let bound = Bound::bind_exact(&mut g, ps.iter().cloned(), true);
        let l = d_loss_graph(&mut g, pair, &bound, &real, &fake, &u, lambda, fade).unwrap().loss;
        let value = g.value(l).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        let vars: Vec<Var> = bound.iter().map(|(_, v)| v).collect();
        (value, grads_or_zero(&mut g, l, &vars, false))
    };
    let (_, ana) = loss_at(&params, true);
    let mut all_a = Vec::new();
    let mut all_n = Vec::new();
    for (j, (_, t)) in params.iter().enumerate() {
        for i in coords(t.numel(), rng).into_iter().take(16) {
            let mut p = params.clone();
            p[j].1.data_mut()[i] += H;
            let lp = loss_at(&p, false).0;
            p[j].1.data_mut()[i] -= 2.0 * H;
            let lm = loss_at(&p, false).0;
            all_n.push((lp - lm) / (2.0 * H));
            all_a.push(ana[j].data()[i]);
        }
    }
    rel_err(&all_a, &all_n)
}

/// Worst relative error of the discriminator loss gradient without and with
/// the gradient penalty.
pub fn d_loss_errors() -> (f64, f64) {
    let pairs = tiny_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut plain, mut penalty): (f64, f64) = (0.0, 0.0);
    for i in 0..INSTANCES {
        let pair = &pairs[i % pairs.len()];
        plain = plain.max(d_loss_check(pair, i as u64, None, &mut rng));
        penalty = penalty.max(d_loss_check(pair, 1000 + i as u64, Some(10.0), &mut rng));
    }
    (plain, penalty)
}

pub fn generator_error() -> f64 {
    let pairs = tiny_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let pair = pairs[i % pairs.len()].clone();
        let w = instantiate(&pair, i as u64);
        let names: Vec<String> = w.g.names().cloned().collect();
        let inputs: Vec<Tensor<f64>> = w.g.iter().map(|(_, t)| t.cast::<f64>()).collect();
        let z = rand_t(&mut rng, &[2, 3]);
        let fade = pair.fading.then(|| rng.random_range(0.0..=1.0));
        let case = Case {
            inputs,
            build: Box::new(move |g, v| {
                let params = names.iter().cloned().zip(v.iter().copied());
                let bound = Bound::from_vars(params);
                let zv = g.constant(z.clone());
                Ok(model::generator(g, &pair.g, &bound, zv, fade)?.output)
            }),
        };
        worst = worst.max(first_order(&case, &mut rng));
    }
    worst
}
