//! Random instance generators shared by the harness suites, experiments and tests.

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::ground_truth::{BrenierModel, ScalarPotential};
use crate::measures::DiscreteMeasure;

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Sorted pair of log-uniform draws from `[lo, hi]`.
pub fn curvature_pair(rng: &mut impl Rng, lo: f64, hi: f64) -> (f64, f64) {
    let a = log_uniform(rng, lo, hi);
    let b = log_uniform(rng, lo, hi);
    (a.min(b), a.max(b))
}

pub fn gaussian_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, gaussian_vec(rng, d * d));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..d {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Affine model with spectrum spanning `[alpha, beta]` (both ends attained when d ≥ 2).
pub fn random_affine_model(rng: &mut impl Rng, d: usize, alpha: f64, beta: f64) -> Result<BrenierModel> {
    let mut eig: Vec<f64> = (0..d).map(|_| rng.random_range(alpha..=beta)).collect();
    eig[0] = alpha;
    if d > 1 {
        eig[d - 1] = beta;
    }
    let q = random_orthogonal(rng, d);
    let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig)) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    BrenierModel::affine_with_bounds(a, gaussian_vec(rng, d), alpha, beta)
}

/// Separable model whose coordinate curvatures stay inside `[alpha, beta]`.
pub fn random_separable_model(rng: &mut impl Rng, d: usize, alpha: f64, beta: f64) -> Result<BrenierModel> {
    let room = beta - alpha;
    let coords = (0..d)
        .map(|_| {
            let c = room * rng.random_range(0.0..=1.0);
            let s = 4.0 * (room - c) * rng.random_range(0.0..=1.0);
            ScalarPotential {
                quadratic: alpha,
                log_cosh: c,
                softplus: s,
                linear: rng.sample(StandardNormal),
            }
        })
        .collect();
    BrenierModel::separable_with_bounds(coords, alpha, beta)
}

/// Affine or separable model (fair coin) with `alpha`, `beta` log-uniform in `[lo, hi]`.
pub fn random_model(rng: &mut impl Rng, d: usize, lo: f64, hi: f64) -> Result<BrenierModel> {
    let (alpha, beta) = curvature_pair(rng, lo, hi);
    if rng.random_bool(0.5) {
        random_affine_model(rng, d, alpha, beta)
    } else {
        random_separable_model(rng, d, alpha, beta)
    }
}

/// `n` standard-normal atoms scaled by `scale`, uniform weights.
pub fn random_cloud(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> Result<DiscreteMeasure> {
    let pts = gaussian_vec(rng, n * d).into_iter().map(|v| v * scale).collect();
    DiscreteMeasure::uniform_flat(d, pts)
}

/// `n` standard-normal atoms with integer-count weights.
pub fn random_weighted_cloud(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> Result<DiscreteMeasure> {
    let pts = gaussian_vec(rng, n * d).into_iter().map(|v| v * scale).collect();
    let counts: Vec<f64> = (0..n).map(|_| rng.random_range(1..=10) as f64).collect();
    let total: f64 = counts.iter().sum();
    DiscreteMeasure::from_flat(d, pts, counts.into_iter().map(|c| c / total).collect())
}

/// Same weights, atoms moved by independent `N(0, sigma²)` noise.
pub fn jitter(rng: &mut impl Rng, mu: &DiscreteMeasure, sigma: f64) -> Result<DiscreteMeasure> {
    let pts = mu
        .points_flat()
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DiscreteMeasure::from_flat(mu.dim(), pts, mu.weights().to_vec())
}

/// Perturbed copy of `mu`: jittered atoms, and with probability ½ a uniform
/// measure on a random subset of them instead of the original weights.
pub fn perturb(rng: &mut impl Rng, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let sigma = log_uniform(rng, 0.01, 1.0);
    let moved = jitter(rng, mu, sigma)?;
    if mu.len() < 2 || rng.random_bool(0.5) {
        return Ok(moved);
    }
    let keep = rng.random_range(mu.len() / 2..=mu.len()).max(1);
    let mut idx = sample_indices(rng, mu.len(), keep).into_vec();
    idx.sort_unstable();
    let pts = idx.iter().flat_map(|&i| moved.point(i).to_vec()).collect();
    DiscreteMeasure::uniform_flat(mu.dim(), pts)
}
