#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Centered predictors and a response with a linear signal plus noise.
pub fn expectile_instance(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, n, p);
    let means: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let z = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let coef: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
    let y = DVector::from_fn(n, |i, _| {
        let s: f64 = (0..p).map(|j| coef[j] * z[(i, j)]).sum();
        s + r.random_range(-1.0..1.0) * (1.0 + z[(i, 0)].abs())
    });
    (z, y)
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    normal_matrix(rng, p, p).qr().q()
}
