#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kph_core::{linear_ph, LinearPHSystem, SampleSet};

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_skew(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            s[(i, j)] = a[(i, j)];
            s[(j, i)] = -a[(i, j)];
        }
    }
    s
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    let p = &a * a.transpose();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (p[(i, j)] + p[(j, i)]))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_psd(rng, n) + DMatrix::identity(n, n) * 0.5
}

pub fn random_linear(rng: &mut ChaCha8Rng, n: usize, m: usize, general_q: bool) -> LinearPHSystem {
    let q = if general_q { random_spd(rng, n) } else { DMatrix::identity(n, n) };
    linear_ph(random_skew(rng, n), random_psd(rng, n), random_matrix(rng, n, m), q).unwrap()
}

/// Random points with random nonnegative weights normalized to one.
pub fn random_weighted(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> SampleSet {
    let points: Vec<DVector<f64>> = (0..k)
        .map(|_| DVector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0)))
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    SampleSet::new(points, weights).unwrap()
}
