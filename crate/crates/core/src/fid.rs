//! Fréchet distance between Gaussian summaries of image features.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arch::{ArchPair, WeightSet};
use crate::error::{Error, Result};
use crate::model;
use crate::seed::rng_for;
use crate::tensor::{gemm, kernels as k, MatRef, Tensor};

/// Feature dimension produced by [`FeatureExtractor`].
pub const FEATURE_DIM: usize = 64;
/// Side length every image is resized to before feature extraction.
pub const EXTRACT_RES: usize = 32;
const CHUNK: usize = 64;
const WIDTHS: [usize; 4] = [3, 16, 32, 16];

/// Fixed random three-conv network mapping images to 64-d features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    seed: u64,
    convs: Vec<(Tensor, Tensor)>,
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let convs = (0..3)
            .map(|i| {
                let (ci, co) = (WIDTHS[i], WIDTHS[i + 1]);
                let std = libm::sqrt(2.0 / (ci * 9) as f64) as f32;
                let mut rng = rng_for(seed, &format!("fid/conv{i}"));
                let w = Tensor::from_fn(&[co, ci, 3, 3], |_| {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    z * std
                });
                let b = Tensor::from_fn(&[co], |_| {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    z * 0.1
                });
                (w, b)
            })
            .collect();
        FeatureExtractor { seed, convs }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn resize(x: Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4("feature_resize")?;
        if h != w || !h.is_power_of_two() {
            return Err(Error::shape("feature_resize", format!("{h}x{w} images are not square powers of two")));
        }
        let mut x = x;
        let mut r = h;
        while r < EXTRACT_RES {
            x = k::upsample2x(&x)?;
            r *= 2;
        }
        while r > EXTRACT_RES {
            x = k::avgpool2x(&x)?;
            r /= 2;
        }
        Ok(x)
    }

    fn layer(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let (w, b) = &self.convs[i];
        let y = k::conv2d(x, w, 1)?;
        let y = k::add(&y, &k::broadcast_channel(b, y.shape())?)?;
        Ok(k::leaky_relu(&y, 0.2))
    }

    /// `[N, 3, R, R]` images (R a power of two) to `[N, 64]` features.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = images.dims4("features")?;
        if c != 3 {
            return Err(Error::shape("features", format!("{c} channels, expected 3")));
        }
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let m = CHUNK.min(n - start);
            let x = Self::resize(images.slice_rows(start, m)?)?;
            let h = self.layer(0, &x)?;
            let h = self.layer(1, &k::avgpool2x(&h)?)?;
            let h = self.layer(2, &k::avgpool2x(&h)?)?;
            let h = k::avgpool2x(&k::avgpool2x(&h)?)?;
            parts.push(h.reshape(&[m, FEATURE_DIM])?);
            start += m;
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        if refs.is_empty() {
            return Ok(Tensor::zeros(&[0, FEATURE_DIM]));
        }
        Tensor::concat_rows(&refs)
    }
}

/// Mean and unbiased covariance of `n` feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Moments of the rows of `features` (`n x dim`, row-major).
    pub fn from_rows(features: &[f64], n: usize, dim: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract(format!("need at least 2 samples for a covariance, got {n}")));
        }
        if features.len() != n * dim {
            return Err(Error::shape("gaussian_stats", format!("{} values for {n}x{dim}", features.len())));
        }
        let mut mean = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let centered: Vec<f64> = features
            .chunks_exact(dim)
            .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
            .collect();
        let mut cov = vec![0.0; dim * dim];
        gemm(MatRef::rm_t(&centered, n, dim), MatRef::rm(&centered, n, dim), 0.0, &mut cov);
        let scale = 1.0 / (n - 1) as f64;
        for i in 0..dim {
            for j in i..dim {
                let v = 0.5 * (cov[i * dim + j] + cov[j * dim + i]) * scale;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        Ok(GaussianStats { mean, cov, n })
    }

    /// Rounds every moment to `f32` precision, the precision stats are
    /// persisted at.
    pub fn quantized(&self) -> Self {
        let q = |v: &f64| *v as f32 as f64;
        GaussianStats { mean: self.mean.iter().map(q).collect(), cov: self.cov.iter().map(q).collect(), n: self.n }
    }
}

/// Feature moments of `[N, 3, R, R]` images.
pub fn extract_stats(images: &Tensor, extractor: &FeatureExtractor) -> Result<GaussianStats> {
    let n = images.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::contract(format!("need at least 2 images, got {n}")));
    }
    let f = extractor.features(images)?;
    let rows: Vec<f64> = f.data().iter().map(|v| *v as f64).collect();
    GaussianStats::from_rows(&rows, n, FEATURE_DIM)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    gemm(MatRef::rm(a, n, n), MatRef::rm(b, n, n), 0.0, &mut out);
    out
}

fn frob(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|v| v * v).sum())
}

fn frob_diff(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub const SQRT_MAX_ITERS: usize = 100;
pub const SQRT_REL_TOL: f64 = 1e-5;

/// Principal square root of a symmetric positive semi-definite `n x n`
/// matrix by the coupled Newton–Schulz iteration on `S / ||S||_F`.
///
/// Eigenvalues that rounding pushed slightly below zero make the iteration
/// diverge once the rest has converged, so the iterate with the smallest
/// residual is kept. Fails unless `||R R - S||_F < 1e-5 ||S||_F`.
pub fn matrix_sqrt(s: &[f64], n: usize) -> Result<Vec<f64>> {
    if s.len() != n * n {
        return Err(Error::shape("matrix_sqrt", format!("{} values for {n}x{n}", s.len())));
    }
    let mut a = s.to_vec();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let norm = frob(&a);
    if !norm.is_finite() {
        return Err(Error::Numeric { detail: "matrix_sqrt of a non-finite matrix".into(), residual: f64::NAN });
    }
    if norm == 0.0 {
        return Ok(vec![0.0; n * n]);
    }
    let unit: Vec<f64> = a.iter().map(|v| v / norm).collect();
    let mut y = unit.clone();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    let mut best = (frob_diff(&matmul(&y, &y, n), &unit), y.clone());
    let mut prev_delta = f64::INFINITY;
    for _ in 0..SQRT_MAX_ITERS {
        let mut t = matmul(&z, &y, n);
        for v in &mut t {
            *v *= -0.5;
        }
        for i in 0..n {
            t[i * n + i] += 1.5;
        }
        let y_next = matmul(&y, &t, n);
        let z_next = matmul(&t, &z, n);
        let delta = frob_diff(&y_next, &y) / frob(&y_next);
        let res = frob_diff(&matmul(&y_next, &y_next, n), &unit);
        if !res.is_finite() || !delta.is_finite() {
            break;
        }
        if res < best.0 {
            best = (res, y_next.clone());
        } else if best.0 < SQRT_REL_TOL && res > 2.0 * best.0 {
            break;
        }
        y = y_next;
        z = z_next;
        if delta < 1e-15 || (delta < 1e-10 && delta >= prev_delta) {
            break;
        }
        prev_delta = delta;
    }
    let y = best.1;
    let scale = libm::sqrt(norm);
    let mut r: Vec<f64> = y.iter().map(|v| v * scale).collect();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (r[i * n + j] + r[j * n + i]);
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    let residual = frob_diff(&matmul(&r, &r, n), &a);
    if !(residual < SQRT_REL_TOL * norm) {
        return Err(Error::Numeric {
            detail: format!("Newton-Schulz square root of a {n}x{n} matrix did not converge"),
            residual: residual / norm,
        });
    }
    Ok(r)
}

pub const CLAMP_TOL: f64 = 1e-6;

/// `||mu_a - mu_b||^2 + Tr(S_a) + Tr(S_b) - 2 Tr((S_a S_b)^(1/2))`.
///
/// The trace term is evaluated as `Tr((A S_b A)^(1/2))` with `A = S_a^(1/2)`,
/// which keeps every square root symmetric PSD.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let n = a.dim();
    if b.dim() != n || a.cov.len() != n * n || b.cov.len() != n * n {
        return Err(Error::shape("frechet_distance", format!("dims {} vs {}", a.dim(), b.dim())));
    }
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }
    let dmu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let tr = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let sa = matrix_sqrt(&a.cov, n)?;
    let m = matmul(&matmul(&sa, &b.cov, n), &sa, n);
    let cross = matrix_sqrt(&m, n)?;
    let d = dmu + tr(&a.cov) + tr(&b.cov) - 2.0 * tr(&cross);
    if d < 0.0 {
        if d >= -CLAMP_TOL {
            return Ok(0.0);
        }
        return Err(Error::Numeric { detail: "Fréchet distance is negative".into(), residual: d });
    }
    Ok(d)
}

/// FID at one resolution. Scores at different resolutions do not compare.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFid {
    pub value: f64,
    pub resolution: u32,
}

impl PartialOrd for RawFid {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.resolution != other.resolution {
            return None;
        }
        self.value.partial_cmp(&other.value)
    }
}

impl RawFid {
    pub fn diverged(resolution: u32) -> Self {
        RawFid { value: f64::INFINITY, resolution }
    }
}

/// FID divided by the baseline FID at the same resolution.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NormalizedFid(pub f64);

/// Baseline FID per resolution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    entries: BTreeMap<u32, f64>,
}

impl BaselineTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fid: RawFid) -> Result<()> {
        if !(fid.value.is_finite() && fid.value > 0.0) {
            return Err(Error::contract(format!(
                "baseline FID at {}px must be finite and positive, got {}",
                fid.resolution, fid.value
            )));
        }
        self.entries.insert(fid.resolution, fid.value);
        Ok(())
    }

    pub fn get(&self, resolution: u32) -> Option<f64> {
        self.entries.get(&resolution).copied()
    }

    pub fn contains(&self, resolution: u32) -> bool {
        self.entries.contains_key(&resolution)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(r, v)| (*r, *v))
    }
}

/// `fid / baseline(resolution)`.
pub fn normalized_fid(fid: RawFid, table: &BaselineTable) -> Result<NormalizedFid> {
    let base = table
        .get(fid.resolution)
        .ok_or_else(|| Error::contract(format!("no baseline FID for {}px", fid.resolution)))?;
    Ok(NormalizedFid(fid.value / base))
}

/// Scores a trained generator. FID is the default; other criteria plug in
/// here.
pub trait Criterion: Sync {
    fn score(&self, pair: &ArchPair, g_weights: &WeightSet, real: &GaussianStats, seed: u64) -> Result<RawFid>;
}

/// FID of `n_samples` generated images against `real`.
#[derive(Clone, Debug)]
pub struct FidCriterion {
    pub extractor: FeatureExtractor,
    pub n_samples: usize,
}

impl Criterion for FidCriterion {
    fn score(&self, pair: &ArchPair, g_weights: &WeightSet, real: &GaussianStats, seed: u64) -> Result<RawFid> {
        evaluate_candidate(g_weights, pair, &self.extractor, real, self.n_samples, seed)
    }
}

/// FID of `n_samples` images from the generator, with latents drawn from
/// `seed`, against precomputed real statistics at the pair's resolution.
/// Non-finite pixels give an infinite FID.
pub fn evaluate_candidate(
    g_weights: &WeightSet,
    pair: &ArchPair,
    extractor: &FeatureExtractor,
    real: &GaussianStats,
    n_samples: usize,
    seed: u64,
) -> Result<RawFid> {
    let resolution = pair.resolution();
    let latent = pair.g.latent_dim.unwrap_or(0);
    let z = model::latents(latent, n_samples, seed, "eval");
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n_samples {
        let m = CHUNK.min(n_samples - start);
        let img = model::generate(pair, g_weights, &z.slice_rows(start, m)?, 1.0)?;
        if !img.all_finite() {
            return Ok(RawFid::diverged(resolution));
        }
        parts.push(img);
        start += m;
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    let images = Tensor::concat_rows(&refs)?;
    let stats = extract_stats(&images, extractor)?;
    if !stats.mean.iter().chain(&stats.cov).all(|v| v.is_finite()) {
        return Ok(RawFid::diverged(resolution));
    }
    Ok(RawFid { value: frechet_distance(&stats, real)?, resolution })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats1(mean: f64, var: f64) -> GaussianStats {
        GaussianStats { mean: vec![mean], cov: vec![var], n: 10 }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let d = frechet_distance(&stats1(0.0, 1.0), &stats1(0.0, 4.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "{d}");
        assert_eq!(frechet_distance(&stats1(1.0, 2.0), &stats1(1.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn sqrt_examples() {
        let r = matrix_sqrt(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert!(frob_diff(&r, &[1.0, 0.0, 0.0, 1.0]) < 1e-12);
        let r = matrix_sqrt(&[4.0, 0.0, 0.0, 9.0], 2).unwrap();
        assert!(frob_diff(&r, &[2.0, 0.0, 0.0, 3.0]) < 1e-12);
        assert_eq!(matrix_sqrt(&[0.0; 4], 2).unwrap(), vec![0.0; 4]);
        assert!(matches!(matrix_sqrt(&[1.0, 2.0, 3.0], 2), Err(Error::Shape { .. })));
    }

    #[test]
    fn indefinite_input_reports_residual() {
        let r = matrix_sqrt(&[1.0, 0.0, 0.0, -1.0], 2);
        assert!(matches!(r, Err(Error::Numeric { .. })), "{r:?}");
    }

    #[test]
    fn two_sample_moments() {
        let s = GaussianStats::from_rows(&[1.0, 2.0, 3.0, 6.0], 2, 2).unwrap();
        assert_eq!(s.mean, vec![2.0, 4.0]);
        // outer((f1 - f2)) / 2 with f1 - f2 = (-2, -4)
        assert_eq!(s.cov, vec![2.0, 4.0, 4.0, 8.0]);
        assert!(GaussianStats::from_rows(&[1.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn identical_images_have_zero_covariance() {
        let ex = FeatureExtractor::new(1);
        let img = Tensor::from_fn(&[3, 3, 8, 8], |i| ((i % 192) as f32 / 192.0) - 0.5);
        let s = extract_stats(&img, &ex).unwrap();
        assert!(s.cov.iter().all(|v| *v == 0.0));
        assert_eq!(s.dim(), FEATURE_DIM);
    }

    #[test]
    fn extractor_is_seeded() {
        assert_eq!(FeatureExtractor::new(4), FeatureExtractor::new(4));
        assert_ne!(FeatureExtractor::new(4), FeatureExtractor::new(5));
        let ex = FeatureExtractor::new(4);
        let x16 = Tensor::from_fn(&[2, 3, 16, 16], |i| (i as f32 * 0.37).sin());
        let x64 = Tensor::from_fn(&[2, 3, 64, 64], |i| (i as f32 * 0.11).cos());
        assert_eq!(ex.features(&x16).unwrap().shape(), &[2, FEATURE_DIM]);
        assert_eq!(ex.features(&x64).unwrap().shape(), &[2, FEATURE_DIM]);
        assert!(ex.features(&Tensor::zeros(&[1, 3, 12, 12])).is_err());
    }

    #[test]
    fn raw_fids_across_resolutions_do_not_compare() {
        let a = RawFid { value: 1.0, resolution: 8 };
        let b = RawFid { value: 2.0, resolution: 16 };
        assert_eq!(a.partial_cmp(&b), None);
        assert!(a < RawFid { value: 2.0, resolution: 8 });
    }

    #[test]
    fn normalization_examples() {
        let mut t = BaselineTable::new();
        t.insert(RawFid { value: 12.0, resolution: 8 }).unwrap();
        assert_eq!(normalized_fid(RawFid { value: 6.0, resolution: 8 }, &t).unwrap(), NormalizedFid(0.5));
        assert_eq!(normalized_fid(RawFid { value: 12.0, resolution: 8 }, &t).unwrap(), NormalizedFid(1.0));
        assert!(matches!(normalized_fid(RawFid { value: 1.0, resolution: 16 }, &t), Err(Error::Contract(_))));
        assert!(t.insert(RawFid { value: f64::INFINITY, resolution: 16 }).is_err());
    }
}
