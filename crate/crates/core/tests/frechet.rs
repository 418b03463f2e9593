use std::time::Instant;

use dggan_core::fid::{frechet_distance, matrix_sqrt, GaussianStats};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "common/spd.rs"]
mod spd;
use spd::*;

#[test]
fn newton_schulz_matches_eigendecomposition() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = random_spd(64, &mut rng);
        let ours = DMatrix::from_row_slice(64, 64, &matrix_sqrt(&row_major(&m), 64).unwrap());
        worst = worst.max((ours - eigen_sqrt(&m)).norm());
    }
    println!("worst Frobenius error {worst:.2e} in {:.1?}", start.elapsed());
    assert!(worst < 1e-5, "{worst}");
}

/// Independent FID: eigen square roots and the `sqrt(A) B sqrt(A)` trace.
fn oracle_fid(a: &GaussianStats, b: &GaussianStats) -> f64 {
    let n = a.dim();
    let ca = DMatrix::from_row_slice(n, n, &a.cov);
    let cb = DMatrix::from_row_slice(n, n, &b.cov);
    let ra = eigen_sqrt(&ca);
    let cross = eigen_sqrt(&(&ra * &cb * &ra));
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    mean + ca.trace() + cb.trace() - 2.0 * cross.trace()
}

#[test]
fn distance_matches_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = 16;
        let stats = |rng: &mut ChaCha8Rng| GaussianStats {
            mean: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            cov: row_major(&random_spd(n, rng)),
            n: 32,
        };
        let (a, b) = (stats(&mut rng), stats(&mut rng));
        let ours = frechet_distance(&a, &b).unwrap();
        let want = oracle_fid(&a, &b);
        assert!((ours - want).abs() < 1e-6 * want.max(1.0), "{ours} vs {want}");
    }
}

#[test]
fn one_dimensional_closed_form_and_self_distance() {
    let a = GaussianStats { mean: vec![0.0], cov: vec![1.0], n: 2 };
    let b = GaussianStats { mean: vec![0.0], cov: vec![4.0], n: 2 };
    assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = GaussianStats { mean: vec![0.3; 64], cov: row_major(&random_spd(64, &mut rng)), n: 10 };
    assert_eq!(frechet_distance(&c, &c).unwrap(), 0.0);
}

#[test]
fn f32_rounded_rank_deficient_covariances_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let a = DMatrix::from_fn(32, 64, |_, _| rng.random_range(-1.0..1.0));
        let m = (a.transpose() * a / 32.0).map(|v: f64| v as f32 as f64);
        let lowest = SymmetricEigen::new(m.clone()).eigenvalues.min();
        let r = DMatrix::from_row_slice(64, 64, &matrix_sqrt(&row_major(&m), 64).unwrap());
        assert!((&r * &r - &m).norm() < 1e-5 * m.norm(), "lowest eigenvalue {lowest:e}");
    }
}
