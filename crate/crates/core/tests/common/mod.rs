#![allow(dead_code)]

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use wloss::DiscreteMeasure;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the simplex (flat Dirichlet).
pub fn simplex<R: Rng>(rng: &mut R, k: usize) -> DiscreteMeasure {
    let w: Array1<f64> = (0..k).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>().into();
    DiscreteMeasure::from_weights(w).unwrap()
}

/// Simplex draw with every entry at least `floor`.
pub fn interior_simplex<R: Rng>(rng: &mut R, k: usize, floor: f64) -> DiscreteMeasure {
    let raw = simplex(rng, k);
    let scale = 1.0 - floor * k as f64;
    DiscreteMeasure::normalized(raw.values().mapv(|v| floor + scale * v)).unwrap()
}

/// Positive vector with entries in `[lo, hi)`.
pub fn positive<R: Rng>(rng: &mut R, k: usize, lo: f64, hi: f64) -> DiscreteMeasure {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(lo..hi)).collect();
    DiscreteMeasure::unnormalized(w).unwrap()
}

/// `‖a - b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &Array1<f64>, b: &Array1<f64>, floor: f64) -> f64 {
    let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(floor);
    diff / scale
}

/// Central differences of `f` along each direction.
pub fn central_differences<F: FnMut(&Array1<f64>) -> f64>(
    x: &Array1<f64>,
    directions: &[Array1<f64>],
    step: f64,
    mut f: F,
) -> Array1<f64> {
    directions
        .iter()
        .map(|d| {
            let plus = x + &(d * step);
            let minus = x - &(d * step);
            (f(&plus) - f(&minus)) / (2.0 * step)
        })
        .collect()
}

/// `e_i - 1/K`: projecting onto these recovers a centered gradient.
pub fn tangent_basis(k: usize) -> Vec<Array1<f64>> {
    (0..k).map(|i| Array1::from_shape_fn(k, |j| if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64)).collect()
}

pub fn unit_basis(k: usize) -> Vec<Array1<f64>> {
    (0..k).map(|i| Array1::from_shape_fn(k, |j| if i == j { 1.0 } else { 0.0 })).collect()
}
