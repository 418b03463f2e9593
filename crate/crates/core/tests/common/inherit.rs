//! Weight inheritance and fade-in checks on freshly grown pairs.

#![allow(dead_code)]

use dggan_core::arch::{apply_action, inherit_weights, instantiate, ArchPair, BaseConfig, GrowthAction, PairWeights};
use dggan_core::model::{self, Bound, Forward};
use dggan_core::{Graph, Tensor};

pub struct InheritRow {
    pub label: String,
    /// Same-name, same-shape tensors compared bitwise.
    pub inherited: usize,
    /// Tensors whose input channels changed; overlap and remainder compared.
    pub sliced: usize,
    /// Probe activations compared bitwise.
    pub probes: usize,
    pub failures: Vec<String>,
}

fn base() -> ArchPair {
    ArchPair::base(BaseConfig { d0: 4, latent_dim: 6, base_channels: 8, min_stage_channels: 4 })
}

/// (label, parent) pairs and the actions tried on each.
pub fn cases() -> Vec<(String, ArchPair, Vec<GrowthAction>)> {
    use GrowthAction::*;
    let b = base();
    let both = apply_action(&b, GrowBoth, 16).unwrap();
    let wide = apply_action(&b, GrowG { filter_size: 7, n_filters: 12 }, 16).unwrap();
    let deep_d = apply_action(&both, GrowD { filter_size: 3, n_filters: 5 }, 16).unwrap();
    let actions = vec![
        GrowG { filter_size: 3, n_filters: 4 },
        GrowG { filter_size: 7, n_filters: 8 },
        GrowG { filter_size: 3, n_filters: 16 },
        GrowD { filter_size: 3, n_filters: 2 },
        GrowD { filter_size: 7, n_filters: 8 },
        GrowD { filter_size: 3, n_filters: 12 },
        GrowBoth,
    ];
    vec![
        ("base".into(), b, actions.clone()),
        ("base.B".into(), both, actions.clone()),
        ("base.G7x12".into(), wide, actions.clone()),
        ("base.B.D3x5".into(), deep_d, actions),
    ]
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Compares every child tensor with the parent (or the fresh init where
/// the parent has nothing to give), element by element.
fn compare_weights(
    child: &PairWeights,
    fresh: &PairWeights,
    parent: &PairWeights,
    row: &mut InheritRow,
) {
    for ((c, f), p) in [(&child.g, &fresh.g, &parent.g), (&child.d, &fresh.d, &parent.d)].map(|(a, b, c)| ((a, b), c)) {
        for (name, t) in c.iter() {
            let fresh_t = f.get(name).unwrap();
            match p.get(name) {
                Some(pt) if pt.shape() == t.shape() => {
                    row.inherited += 1;
                    if pt.data() != t.data() {
                        row.failures.push(format!("{name} not copied bitwise"));
                    }
                }
                Some(pt) => {
                    row.sliced += 1;
                    let (cs, ps) = (strides(t.shape()), strides(pt.shape()));
                    for (i, v) in t.data().iter().enumerate() {
                        let idx: Vec<usize> = cs.iter().zip(t.shape()).map(|(s, d)| i / s % d).collect();
                        let want = if idx.iter().zip(pt.shape()).all(|(a, b)| a < b) {
                            pt.data()[idx.iter().zip(&ps).map(|(a, s)| a * s).sum::<usize>()]
                        } else {
                            fresh_t.data()[i]
                        };
                        if v.to_bits() != want.to_bits() {
                            row.failures.push(format!("{name}{idx:?} is {v}, expected {want}"));
                            break;
                        }
                    }
                }
                None => {
                    if t.data() != fresh_t.data() {
                        row.failures.push(format!("new tensor {name} is not its fresh initialization"));
                    }
                }
            }
        }
    }
}

fn g_forward(pair: &ArchPair, w: &PairWeights, z: &Tensor, fade: Option<f64>) -> (Graph<f32>, Forward) {
    let mut g = Graph::<f32>::new();
    let b = Bound::bind(&mut g, &w.g, false);
    let zv = g.constant(z.clone());
    let f = model::generator(&mut g, &pair.g, &b, zv, fade).unwrap();
    (g, f)
}

fn d_forward(pair: &ArchPair, w: &PairWeights, x: &Tensor, fade: Option<f64>) -> (Graph<f32>, Forward) {
    let mut g = Graph::<f32>::new();
    let b = Bound::bind(&mut g, &w.d, false);
    let xv = g.constant(x.clone());
    let f = model::discriminator(&mut g, &pair.d, &b, xv, fade).unwrap();
    (g, f)
}

fn compare_probes(
    keys: &[String],
    (pg, pf): &(Graph<f32>, Forward),
    (cg, cf): &(Graph<f32>, Forward),
    row: &mut InheritRow,
) {
    for k in keys {
        let (Some(a), Some(b)) = (pf.probe(k), cf.probe(k)) else {
            row.failures.push(format!("probe {k} missing"));
            continue;
        };
        row.probes += 1;
        if pg.value(a).data() != cg.value(b).data() {
            row.failures.push(format!("activation at {k} differs"));
        }
    }
}

pub fn signal(shape: &[usize], phase: f32) -> Tensor {
    Tensor::from_fn(shape, |i| ((i as f32) * 0.618 + phase).sin() * 0.9)
}

/// Probe keys that see exactly the parent's computation in the child.
fn shared_probes(action: GrowthAction, parent_keys: &[String]) -> Vec<String> {
    match action {
        // everything before the top stage's anchor
        GrowthAction::GrowG { .. } => parent_keys[..parent_keys.len() - 1].to_vec(),
        // fromRGB and anchor of the top stage
        GrowthAction::GrowD { .. } => parent_keys[..2].to_vec(),
        GrowthAction::GrowBoth => parent_keys.to_vec(),
    }
}

pub fn inherit_case(label: &str, parent: &ArchPair, action: GrowthAction, seed: u64) -> InheritRow {
    let mut row = InheritRow { label: format!("{label} + {action}"), inherited: 0, sliced: 0, probes: 0, failures: Vec::new() };
    let child = apply_action(parent, action, 16).unwrap();
    let pw = instantiate(parent, seed);
    let fresh = instantiate(&child, seed + 1);
    let mut cw = fresh.clone();
    inherit_weights(&child, &mut cw, parent, &pw).unwrap();
    compare_weights(&cw, &fresh, &pw, &mut row);

    let r = parent.resolution() as usize;
    let z = signal(&[3, parent.g.latent_dim.unwrap() as usize], 0.3);
    // a finished parent runs without its fade-in blend
    let child_fade = child.fading.then_some(0.0);
    let pg = g_forward(parent, &pw, &z, None);
    let cg = g_forward(&child, &cw, &z, child_fade);
    let keys: Vec<String> = pg.1.probes.iter().map(|(k, _)| k.clone()).collect();
    compare_probes(&shared_probes(action, &keys), &pg, &cg, &mut row);

    let cr = child.resolution() as usize;
    let x = signal(&[3, 3, cr, cr], 1.1);
    let x_parent = if cr > r { dggan_core::synth::downsample_to(&x, r as u32).unwrap() } else { x.clone() };
    let pd = d_forward(parent, &pw, &x_parent, None);
    let cd = d_forward(&child, &cw, &x, child_fade);
    let keys: Vec<String> = pd.1.probes.iter().map(|(k, _)| k.clone()).collect();
    let shared = shared_probes(action, &keys);
    compare_probes(&shared, &pd, &cd, &mut row);
    row
}

pub fn inheritance_report() -> Vec<InheritRow> {
    let mut out = Vec::new();
    for (i, (label, parent, actions)) in cases().into_iter().enumerate() {
        for (j, a) in actions.into_iter().enumerate() {
            out.push(inherit_case(&label, &parent, a, 10 * i as u64 + j as u64));
        }
    }
    out
}

pub struct FadeRow {
    pub label: String,
    /// `max |G_child(alpha=0) - up(G_parent)|`, expected exactly 0.
    pub g_gap: f32,
    /// `max |D_child(x, alpha=0) - D_parent(down(x))|`, expected exactly 0.
    pub d_gap: f32,
    /// Largest decrease of the drift between consecutive alphas.
    pub worst_drop: f64,
    /// Largest `drift(alpha) - alpha * |H - L|` over the ramp.
    pub worst_excess: f64,
    /// Largest deviation of the output from `tanh((1 - a) L + a H)`.
    pub blend_err: f64,
    /// Drift at alpha = 1.
    pub full_drift: f64,
    pub steps: usize,
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pre-activation RGB of the new stage (`H`) and the upsampled previous
/// stage (`L`) of a fading generator, computed from the probed features.
fn rgb_paths(pair: &ArchPair, w: &PairWeights, z: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::<f64>::new();
    let b = Bound::bind(&mut g, &w.g, false);
    let zv = g.constant(z.cast());
    let f = model::generator(&mut g, &pair.g, &b, zv, Some(1.0)).unwrap();
    let spec = &pair.g;
    let top = spec.top();
    let last_feature = |s: usize| {
        let l = spec.stages[s].iter().rev().find(|l| l.role != dggan_core::arch::LayerRole::ToRgb).unwrap();
        f.probe(&spec.layer_key(s, l.id)).unwrap()
    };
    let to_rgb = |g: &mut Graph<f64>, s: usize, h| {
        let l = spec.stages[s].iter().find(|l| l.role == dggan_core::arch::LayerRole::ToRgb).unwrap();
        let key = spec.layer_key(s, l.id);
        let (wv, bv) = (b.var(&format!("{key}/weight")).unwrap(), b.var(&format!("{key}/bias")).unwrap());
        g.conv2d_bias(h, wv, bv, 0).unwrap()
    };
    let (hi_in, lo_in) = (last_feature(top), last_feature(top - 1));
    let hi = to_rgb(&mut g, top, hi_in);
    let lo = to_rgb(&mut g, top - 1, lo_in);
    let lo = g.upsample(lo).unwrap();
    (g.value(hi).data().to_vec(), g.value(lo).data().to_vec())
}

pub fn fade_case(label: &str, parent: &ArchPair, seed: u64) -> FadeRow {
    let child = apply_action(parent, GrowthAction::GrowBoth, 64).unwrap();
    let pw = instantiate(parent, seed);
    let mut cw = instantiate(&child, seed + 1);
    inherit_weights(&child, &mut cw, parent, &pw).unwrap();
    let z = signal(&[4, parent.g.latent_dim.unwrap() as usize], seed as f32);

    let (pg, pf) = g_forward(parent, &pw, &z, None);
    let up = {
        let mut g = Graph::<f32>::new();
        let v = g.constant(pg.value(pf.output).clone());
        let u = g.upsample(v).unwrap();
        g.value(u).clone()
    };
    let at0 = model::generate(&child, &cw.g, &z, 0.0).unwrap();
    let g_gap = at0.data().iter().zip(up.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);

    let r = child.resolution() as usize;
    let x = signal(&[4, 3, r, r], 0.7 + seed as f32);
    let xd = dggan_core::synth::downsample_to(&x, r as u32 / 2).unwrap();
    let dc = model::discriminate(&child, &cw.d, &x, 0.0).unwrap();
    let dp = model::discriminate(parent, &pw.d, &xd, 1.0).unwrap();
    let d_gap = dc.data().iter().zip(dp.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);

    let (hi, lo) = rgb_paths(&child, &cw, &z);
    let span = norm(&hi, &lo);
    let out_at = |alpha: f64| {
        let mut g = Graph::<f64>::new();
        let b = Bound::bind(&mut g, &cw.g, false);
        let zv = g.constant(z.cast());
        let f = model::generator(&mut g, &child.g, &b, zv, Some(alpha)).unwrap();
        g.value(f.output).data().to_vec()
    };
    let base = out_at(0.0);
    let steps = 32;
    let (mut prev, mut worst_drop, mut worst_excess, mut blend_err) = (0.0, 0.0f64, f64::NEG_INFINITY, 0.0f64);
    for i in 0..=steps {
        let alpha = i as f64 / steps as f64;
        let out = out_at(alpha);
        for ((o, h), l) in out.iter().zip(&hi).zip(&lo) {
            blend_err = blend_err.max((o - ((1.0 - alpha) * l + alpha * h).tanh()).abs());
        }
        let drift = norm(&out, &base);
        worst_drop = worst_drop.max(prev - drift);
        worst_excess = worst_excess.max(drift - alpha * span);
        prev = drift;
    }
    FadeRow { label: label.to_string(), g_gap, d_gap, worst_drop, worst_excess, blend_err, full_drift: prev, steps }
}

pub fn fade_report() -> Vec<FadeRow> {
    use GrowthAction::*;
    let b = base();
    let wide = apply_action(&b, GrowG { filter_size: 3, n_filters: 12 }, 64).unwrap();
    let both = apply_action(&b, GrowBoth, 64).unwrap();
    let both_d = apply_action(&both, GrowD { filter_size: 7, n_filters: 6 }, 64).unwrap();
    let mut out = Vec::new();
    for (i, (label, p)) in [("base", b), ("base.G3x12", wide), ("base.B", both), ("base.B.D7x6", both_d)].into_iter().enumerate() {
        for s in 0..3 {
            out.push(fade_case(label, &p, 100 * i as u64 + s));
        }
    }
    out
}
