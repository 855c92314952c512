//! Synthetic Brenier models with known curvature bounds.
//!
//! A [`BrenierModel`] is a smooth, strongly convex potential φ0 with
//! `alpha·I ⪯ ∇²φ0 ⪯ beta·I`, its gradient map `T0 = ∇φ0`, the conjugate φ0*
//! and the inverse map `∇φ0*`. Two families are provided: quadratics
//! (affine maps, exact conjugates) and separable sums of scalar potentials
//! whose conjugates are computed by monotone root finding.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exact_ot::{dot, sq_dist, TransportPlan};
use crate::linalg;
use crate::measures::{DiscreteMeasure, PointMap, Sampler};
use crate::rng::rng_from_seed;

/// Tolerance on the eigenvalue range of an affine model.
pub const EIG_RANGE_TOL: f64 = 1e-9;
/// Tolerance of the direct A1/A2 probe check.
pub const CURVATURE_PROBE_TOL: f64 = 1e-8;

const PROBE_GRID: usize = 1000;
const PROBE_RADIUS: f64 = 10.0;
const BISECTION_STEPS: usize = 80;
const NEWTON_STEPS: usize = 5;
const MAX_BRACKET_EXPANSIONS: usize = 64;

fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Scalar convex potential
/// `f(t) = quadratic·t²/2 + log_cosh·ln cosh t + softplus·ln(1 + eᵗ) + linear·t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarPotential {
    #[serde(default)]
    pub quadratic: f64,
    #[serde(default)]
    pub log_cosh: f64,
    #[serde(default)]
    pub softplus: f64,
    #[serde(default)]
    pub linear: f64,
}

impl ScalarPotential {
    pub fn quadratic(q: f64) -> Self {
        Self {
            quadratic: q,
            log_cosh: 0.0,
            softplus: 0.0,
            linear: 0.0,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        0.5 * self.quadratic * t * t
            + self.log_cosh * log_cosh(t)
            + self.softplus * softplus(t)
            + self.linear * t
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.quadratic * t + self.log_cosh * t.tanh() + self.softplus * logistic(t) + self.linear
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let sech2 = 1.0 - t.tanh().powi(2);
        let s = logistic(t);
        self.quadratic + self.log_cosh * sech2 + self.softplus * s * (1.0 - s)
    }

    /// Analytic `(inf, sup)` of `f''` over the real line.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let lo = self.quadratic + self.log_cosh.min(0.0) + self.softplus.min(0.0) / 4.0;
        let hi = self.quadratic + self.log_cosh.max(0.0) + self.softplus.max(0.0) / 4.0;
        (lo, hi)
    }

    /// Solves `f'(t) = y` given slope bounds `alpha <= f'' <= beta`.
    fn solve_derivative(&self, y: f64, alpha: f64, beta: f64) -> Result<f64> {
        let g = |t: f64| self.derivative(t) - y;
        let r = y - self.derivative(0.0);
        let (mut lo, mut hi) = {
            let (a, b) = (r / beta, r / alpha);
            (a.min(b), a.max(b))
        };
        let mut width = (hi - lo).max(1.0);
        let mut expansions = 0;
        while !(g(lo) <= 0.0 && g(hi) >= 0.0) {
            if expansions == MAX_BRACKET_EXPANSIONS {
                return Err(Error::Numerical(format!(
                    "could not bracket f'(t) = {y}; slope bounds [{alpha}, {beta}] violated?"
                )));
            }
            if g(lo) > 0.0 {
                lo -= width;
            }
            if g(hi) < 0.0 {
                hi += width;
            }
            width *= 2.0;
            expansions += 1;
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..NEWTON_STEPS {
            let step = g(t) / self.second_derivative(t);
            let next = t - step;
            if !next.is_finite() || next < lo || next > hi {
                break;
            }
            t = next;
        }
        Ok(t)
    }
}

#[derive(Clone, Debug)]
pub enum ModelKind {
    /// `φ0(x) = ½ xᵀAx + bᵀx`.
    Affine {
        a: DMatrix<f64>,
        b: DVector<f64>,
        a_inv: DMatrix<f64>,
    },
    /// `φ0(x) = Σ_k f_k(x_k)`.
    Separable { coords: Vec<ScalarPotential> },
}

/// A smooth, strongly convex Brenier potential with curvature in `[alpha, beta]`.
#[derive(Clone, Debug)]
pub struct BrenierModel {
    dim: usize,
    kind: ModelKind,
    alpha: f64,
    beta: f64,
}

impl BrenierModel {
    /// Affine model with `alpha`, `beta` read off the spectrum of `a`.
    pub fn affine(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        linalg::check_spd(&a, "A")?;
        let (lo, hi) = linalg::eig_range(&a);
        Self::affine_with_bounds(a, b, lo, hi)
    }

    /// Affine model with declared bounds; the spectrum of `a` must lie in
    /// `[alpha, beta]` up to `EIG_RANGE_TOL`.
    pub fn affine_with_bounds(a: DMatrix<f64>, b: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        check_bounds(alpha, beta)?;
        linalg::check_spd(&a, "A")?;
        let (lo, hi) = linalg::eig_range(&a);
        if lo < alpha - EIG_RANGE_TOL || hi > beta + EIG_RANGE_TOL {
            return Err(Error::Config(format!(
                "spectrum [{lo}, {hi}] of A is not inside [{alpha}, {beta}]"
            )));
        }
        let a = (&a + a.transpose()) * 0.5;
        let a_inv = linalg::sym_inverse(&a);
        Ok(Self {
            dim: b.len(),
            kind: ModelKind::Affine {
                a,
                b: DVector::from_vec(b),
                a_inv,
            },
            alpha,
            beta,
        })
    }

    /// `A = c·I`, `b = 0`.
    pub fn scaling(dim: usize, c: f64) -> Result<Self> {
        Self::affine(DMatrix::identity(dim, dim) * c, vec![0.0; dim])
    }

    /// Separable model with the tightest analytic bounds.
    pub fn separable(coords: Vec<ScalarPotential>) -> Result<Self> {
        let (lo, hi) = coords.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, c| {
            let (a, b) = c.curvature_bounds();
            (acc.0.min(a), acc.1.max(b))
        });
        Self::separable_with_bounds(coords, lo, hi)
    }

    /// Separable model with declared bounds, checked analytically and on a
    /// probe grid of derivative slopes.
    pub fn separable_with_bounds(coords: Vec<ScalarPotential>, alpha: f64, beta: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Config("separable model needs at least one coordinate".into()));
        }
        check_bounds(alpha, beta)?;
        for (k, c) in coords.iter().enumerate() {
            let (lo, hi) = c.curvature_bounds();
            if lo < alpha - EIG_RANGE_TOL || hi > beta + EIG_RANGE_TOL {
                return Err(Error::Config(format!(
                    "coordinate {k} has curvature in [{lo}, {hi}], outside [{alpha}, {beta}]"
                )));
            }
            check_slopes_on_grid(c, alpha, beta)
                .map_err(|e| Error::Config(format!("coordinate {k}: {e}")))?;
        }
        Ok(Self {
            dim: coords.len(),
            kind: ModelKind::Separable { coords },
            alpha,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// Same potential with different declared bounds (must still be valid).
    pub fn with_bounds(&self, alpha: f64, beta: f64) -> Result<Self> {
        match &self.kind {
            ModelKind::Affine { a, b, .. } => {
                Self::affine_with_bounds(a.clone(), b.as_slice().to_vec(), alpha, beta)
            }
            ModelKind::Separable { coords } => Self::separable_with_bounds(coords.clone(), alpha, beta),
        }
    }

    /// The model of `c·φ0`: map, `alpha` and `beta` all scale by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {c}")));
        }
        match &self.kind {
            ModelKind::Affine { a, b, .. } => Self::affine_with_bounds(
                a * c,
                b.iter().map(|v| v * c).collect(),
                self.alpha * c,
                self.beta * c,
            ),
            ModelKind::Separable { coords } => Self::separable_with_bounds(
                coords
                    .iter()
                    .map(|p| ScalarPotential {
                        quadratic: p.quadratic * c,
                        log_cosh: p.log_cosh * c,
                        softplus: p.softplus * c,
                        linear: p.linear * c,
                    })
                    .collect(),
                self.alpha * c,
                self.beta * c,
            ),
        }
    }

    /// φ0(x).
    pub fn potential(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            ModelKind::Affine { a, b, .. } => {
                let xv = DVector::from_column_slice(x);
                0.5 * xv.dot(&(a * &xv)) + b.dot(&xv)
            }
            ModelKind::Separable { coords } => {
                coords.iter().zip(x).map(|(c, &t)| c.value(t)).sum()
            }
        }
    }

    /// T0(x) = ∇φ0(x), written into `out`.
    pub fn map_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            ModelKind::Affine { a, b, .. } => {
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = b[r];
                    for (c, xc) in x.iter().enumerate() {
                        acc += a[(r, c)] * xc;
                    }
                    *o = acc;
                }
            }
            ModelKind::Separable { coords } => {
                for ((o, c), &t) in out.iter_mut().zip(coords).zip(x) {
                    *o = c.derivative(t);
                }
            }
        }
    }

    /// T0(x) = ∇φ0(x).
    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.map_into(x, &mut out);
        out
    }

    /// φ0*(y).
    pub fn conjugate(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        match &self.kind {
            ModelKind::Affine { b, a_inv, .. } => {
                let r = DVector::from_column_slice(y) - b;
                Ok(0.5 * r.dot(&(a_inv * &r)))
            }
            ModelKind::Separable { coords } => {
                let mut total = 0.0;
                for (c, &yk) in coords.iter().zip(y) {
                    let t = c.solve_derivative(yk, self.alpha, self.beta)?;
                    total += t * yk - c.value(t);
                }
                Ok(total)
            }
        }
    }

    /// ∇φ0*(y) = T0⁻¹(y).
    pub fn inverse_map(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        match &self.kind {
            ModelKind::Affine { b, a_inv, .. } => {
                let r = DVector::from_column_slice(y) - b;
                Ok((a_inv * r).as_slice().to_vec())
            }
            ModelKind::Separable { coords } => coords
                .iter()
                .zip(y)
                .map(|(c, &yk)| c.solve_derivative(yk, self.alpha, self.beta))
                .collect(),
        }
    }

    /// Direct check of the curvature sandwich on random probe pairs:
    /// `φ0(x) + ⟨∇φ0(x), y−x⟩ + (alpha/2)‖y−x‖² ≤ φ0(y) ≤ ... + (beta/2)‖y−x‖²`.
    pub fn validate_probes(&self, probes: usize, seed: u64) -> Result<()> {
        let mut rng = rng_from_seed(seed);
        let d = self.dim;
        for _ in 0..probes {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let gx = self.map(&x);
            let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let base = self.potential(&x) + dot(&gx, &diff);
            let r2 = dot(&diff, &diff);
            let fy = self.potential(&y);
            let tol = CURVATURE_PROBE_TOL * (1.0 + fy.abs().max(base.abs()));
            if fy < base + 0.5 * self.alpha * r2 - tol || fy > base + 0.5 * self.beta * r2 + tol {
                return Err(Error::Config(format!(
                    "curvature bounds [{}, {}] violated at probe x={x:?}, y={y:?}",
                    self.alpha, self.beta
                )));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> ModelRecord {
        match &self.kind {
            ModelKind::Affine { a, b, .. } => ModelRecord {
                kind: "affine".into(),
                a: Some(linalg::to_rows(a)),
                b: Some(b.as_slice().to_vec()),
                alpha: self.alpha,
                beta: self.beta,
                f_spec: None,
            },
            ModelKind::Separable { coords } => ModelRecord {
                kind: "separable".into(),
                a: None,
                b: None,
                alpha: self.alpha,
                beta: self.beta,
                f_spec: Some(coords.clone()),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelRecord>(s)?.into_model()
    }
}

fn check_bounds(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
        return Err(Error::Config(format!(
            "curvature bounds need 0 < alpha <= beta, got [{alpha}, {beta}]"
        )));
    }
    Ok(())
}

fn check_slopes_on_grid(c: &ScalarPotential, alpha: f64, beta: f64) -> Result<()> {
    let h = 2.0 * PROBE_RADIUS / (PROBE_GRID - 1) as f64;
    let mut prev = c.derivative(-PROBE_RADIUS);
    for k in 1..PROBE_GRID {
        let t = -PROBE_RADIUS + k as f64 * h;
        let cur = c.derivative(t);
        let slope = (cur - prev) / h;
        let tol = 1e-6 * (1.0 + beta);
        if !(cur > prev) || slope < alpha - tol || slope > beta + tol {
            return Err(Error::Config(format!(
                "derivative slope {slope} near t = {t} outside [{alpha}, {beta}]"
            )));
        }
        prev = cur;
    }
    Ok(())
}

impl PointMap for BrenierModel {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.map_into(x, out)
    }
}

/// JSON form of a model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelRecord {
    pub kind: String,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_spec: Option<Vec<ScalarPotential>>,
}

impl ModelRecord {
    pub fn into_model(self) -> Result<BrenierModel> {
        match self.kind.as_str() {
            "affine" => {
                let a = self.a.ok_or_else(|| Error::Config("affine model needs \"A\"".into()))?;
                let a = linalg::from_rows(&a)?;
                let b = self.b.unwrap_or_else(|| vec![0.0; a.nrows()]);
                BrenierModel::affine_with_bounds(a, b, self.alpha, self.beta)
            }
            "separable" => {
                let f = self
                    .f_spec
                    .ok_or_else(|| Error::Config("separable model needs \"f_spec\"".into()))?;
                BrenierModel::separable_with_bounds(f, self.alpha, self.beta)
            }
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Curvature bounds implied by Caffarelli's contraction theorem for
/// `N(m1, Σ1) -> N(m2, Σ2)`: `sqrt(λmin(Σ2)/λmax(Σ1))` and
/// `sqrt(λmax(Σ2)/λmin(Σ1))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaffarelliBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Gaussian source/target pair with its exact (affine) OT map.
#[derive(Clone, Debug)]
pub struct GaussianPair {
    pub model: BrenierModel,
    pub source: Sampler,
    pub target: Sampler,
    pub caffarelli: CaffarelliBounds,
}

/// `A = Σ1^{-1/2} (Σ1^{1/2} Σ2 Σ1^{1/2})^{1/2} Σ1^{-1/2}`, `b = m2 − A m1`.
/// Samplers carry seed 0; reseed them with [`Sampler::with_seed`].
pub fn gaussian_pair_model(
    m1: Vec<f64>,
    cov1: DMatrix<f64>,
    m2: Vec<f64>,
    cov2: DMatrix<f64>,
) -> Result<GaussianPair> {
    check_dim(m1.len(), m2.len())?;
    linalg::check_spd(&cov1, "source covariance")?;
    linalg::check_spd(&cov2, "target covariance")?;
    let r1 = linalg::sym_sqrt(&cov1);
    let r1_inv = linalg::sym_inv_sqrt(&cov1);
    let middle = linalg::sym_sqrt(&(&r1 * &cov2 * &r1));
    let a = &r1_inv * middle * &r1_inv;
    let a = (&a + a.transpose()) * 0.5;
    let am1 = &a * DVector::from_column_slice(&m1);
    let b: Vec<f64> = m2.iter().zip(am1.iter()).map(|(x, y)| x - y).collect();

    let (s1_lo, s1_hi) = linalg::eig_range(&cov1);
    let (s2_lo, s2_hi) = linalg::eig_range(&cov2);
    let caffarelli = CaffarelliBounds {
        lower: (s2_lo / s1_hi).sqrt(),
        upper: (s2_hi / s1_lo).sqrt(),
    };
    let model = BrenierModel::affine(a, b)?;
    if model.alpha() < caffarelli.lower - 1e-9 || model.beta() > caffarelli.upper + 1e-9 {
        return Err(Error::Numerical(format!(
            "map curvature [{}, {}] escapes Caffarelli bounds [{}, {}]",
            model.alpha(),
            model.beta(),
            caffarelli.lower,
            caffarelli.upper
        )));
    }
    Ok(GaussianPair {
        model,
        source: Sampler::gaussian(m1, cov1, 0)?,
        target: Sampler::gaussian(m2, cov2, 0)?,
        caffarelli,
    })
}

/// Bregman divergence of φ0* between `y` and the base point `T0(x)`:
/// `φ0*(y) − φ0*(T0 x) − ⟨x, y − T0 x⟩`.
pub fn bregman_divergence(model: &BrenierModel, y: &[f64], x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    check_dim(model.dim(), y.len())?;
    let tx = model.map(x);
    let diff: Vec<f64> = y.iter().zip(&tx).map(|(a, b)| a - b).collect();
    Ok(model.conjugate(y)? - model.conjugate(&tx)? - dot(x, &diff))
}

/// `Σ_ij π_ij · bregman(y_j, x_i)`.
pub fn semidual_gap(model: &BrenierModel, plan: &TransportPlan) -> Result<f64> {
    check_dim(model.dim(), plan.dim())?;
    let (src, tgt) = (plan.source(), plan.target());
    plan.entries().iter().try_fold(0.0, |acc, e| {
        Ok(acc + e.mass * bregman_divergence(model, tgt.point(e.target), src.point(e.source))?)
    })
}

/// `Σ_i w_i φ0(x_i) + Σ_j v_j φ0*(y_j)`.
pub fn semidual_value(
    model: &BrenierModel,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
) -> Result<f64> {
    check_dim(model.dim(), source.dim())?;
    check_dim(model.dim(), target.dim())?;
    let f: f64 = source.iter().map(|(x, w)| w * model.potential(x)).sum();
    let g = target
        .iter()
        .try_fold(0.0, |acc, (y, v)| Ok::<_, Error>(acc + v * model.conjugate(y)?))?;
    Ok(f + g)
}

/// `Σ_i w_i ‖psi(x_i) − T0(x_i)‖²` for two maps over the same measure.
pub fn map_discrepancy(a: &dyn PointMap, b: &dyn PointMap, mu: &DiscreteMeasure) -> f64 {
    mu.iter()
        .map(|(x, w)| w * sq_dist(&a.apply(x), &b.apply(x)))
        .sum()
}
