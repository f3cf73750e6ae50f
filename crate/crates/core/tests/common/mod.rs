#![allow(dead_code)]

use manifold_gauss::gaussian::{rng_from_seed, Rng};
use manifold_gauss::Gaussian;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn normal_matrix(rng: &mut Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Full-rank Gaussian with covariance `A A^T / n + 0.1 I`.
pub fn random_gaussian(rng: &mut Rng, n: usize) -> Gaussian {
    let a = normal_matrix(rng, n, n);
    let cov = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
    Gaussian::new(normal_vector(rng, n), cov).unwrap()
}

/// A random instance: dimension in `dims`, constraint count in `1..n`.
pub struct Instance {
    pub g: Gaussian,
    pub s: DMatrix<f64>,
    pub c: DVector<f64>,
}

pub fn random_instance(seed: u64, dims: std::ops::RangeInclusive<usize>) -> Instance {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(dims);
    let m = rng.random_range(1..n);
    Instance {
        g: random_gaussian(&mut rng, n),
        s: normal_matrix(&mut rng, n, m),
        c: normal_vector(&mut rng, m),
    }
}

/// `|a - b|_F / max(|b|_F, 1e-300)`, zero when both vanish.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        return 0.0;
    }
    diff / b.norm().max(1e-300)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        return 0.0;
    }
    diff / b.norm().max(1e-300)
}

/// Scale-aware error for matrices that may be exactly zero: relative to `|b|_F + 1`.
pub fn scaled_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (b.norm() + 1.0)
}

pub fn scaled_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / (b.norm() + 1.0)
}
