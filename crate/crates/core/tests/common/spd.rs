//! Random covariances and the eigendecomposition oracle.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // rank-deficient sample covariances are the realistic case, so mix both
    let rows = if rng.random_bool(0.5) { 2 * n } else { n / 2 };
    let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
    a.transpose() * a / rows as f64
}

pub fn eigen_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}
