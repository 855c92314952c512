//! Numerical checks of the stability inequalities on finite-truth designs.
//!
//! Every check builds the true target as `Q = T0#P` from a finite `P`, so all
//! Wasserstein distances to the truth are exact linear programs.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design;
use crate::error::{check_dim, Error, Result};
use crate::estimators::one_nn_estimator;
use crate::exact_ot::{coupling_correlation, solve_kantorovich, sq_dist, w2_squared, Coupling, TransportPlan};
use crate::ground_truth::{semidual_gap, semidual_value, BrenierModel};
use crate::measures::{pushforward_measure, DiscreteMeasure, PointMap, Sampler};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Relative tolerance of the violation flag.
pub const VIOLATION_TOL: f64 = 1e-9;
/// Relative tolerance of the Bregman identity.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Map error of an optimal coupling against both marginal perturbations.
    Theorem3,
    /// Source held fixed, target perturbed.
    Corollary1,
    /// Target held at `T0#P`, source perturbed.
    Corollary2,
    /// Both marginals replaced by samples from a finite law.
    Corollary3,
    /// Coupling distance bounded below by the marginal distances.
    Corollary4,
    QuadraticGrowth,
    /// Semi-dual gap equals the averaged Bregman divergence.
    Lemma1,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Theorem3 => "theorem3",
            Check::Corollary1 => "corollary1",
            Check::Corollary2 => "corollary2",
            Check::Corollary3 => "corollary3",
            Check::Corollary4 => "corollary4",
            Check::QuadraticGrowth => "quadratic-growth",
            Check::Lemma1 => "lemma1",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

/// One evaluated inequality `lhs <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub check: Check,
    pub trial: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub components: BTreeMap<String, f64>,
    pub violated: bool,
    pub meta: TrialMeta,
}

pub fn is_violation(slack: f64, rhs: f64) -> bool {
    !(slack >= -VIOLATION_TOL * (1.0 + rhs.abs()))
}

impl StabilityReport {
    fn new(check: Check, lhs: f64, rhs: f64, components: BTreeMap<String, f64>, meta: TrialMeta) -> Self {
        let slack = rhs - lhs;
        Self {
            check,
            trial: 0,
            lhs,
            rhs,
            slack,
            components,
            violated: is_violation(slack, rhs),
            meta,
        }
    }

    pub fn with_trial(mut self, trial: u64, seed: u64) -> Self {
        self.trial = trial;
        self.meta.seed = seed;
        self
    }

    pub fn component(&self, key: &str) -> Option<f64> {
        self.components.get(key).copied()
    }

    /// Slack rebuilt from the recorded components alone.
    pub fn recompute_slack(&self) -> Option<f64> {
        let c = |k: &str| self.component(k);
        let (alpha, beta) = (self.meta.alpha, self.meta.beta);
        Some(match self.check {
            Check::Theorem3 | Check::Corollary3 => {
                let rhs = c("w2sq_q")? / alpha + beta * c("w2sq_p")? + 2.0 * c("w2_p")? * c("w2_q")?;
                rhs - c("coupling_error")? / beta
            }
            Check::Corollary1 => c("w2sq_q")? / alpha - c("coupling_error")? / beta,
            Check::Corollary2 => beta * c("w2sq_p")? - c("coupling_error")? / beta,
            Check::Corollary4 => c("w2sq_coupling")? - c("w2sq_p")?.max(c("w2sq_q")?),
            Check::QuadraticGrowth => {
                let (gap, d) = (c("gap")?, c("discrepancy")?);
                (gap - d / (2.0 * beta)).min(d / (2.0 * alpha) - gap)
            }
            Check::Lemma1 => {
                let gap = c("gap_bregman")?;
                IDENTITY_TOL * (1.0 + gap.abs()) - (c("gap_direct")? - gap).abs()
            }
        })
    }
}

fn meta(model: &BrenierModel, n: usize, m: usize) -> TrialMeta {
    TrialMeta {
        d: model.dim(),
        n,
        m,
        alpha: model.alpha(),
        beta: model.beta(),
        seed: 0,
    }
}

fn check_same_dim(model: &BrenierModel, measures: &[&DiscreteMeasure]) -> Result<()> {
    for mu in measures {
        check_dim(model.dim(), mu.dim())?;
    }
    Ok(())
}

/// `Σ π_ij ‖y_j − T0(x_i)‖²`.
pub fn coupling_map_error(model: &BrenierModel, plan: &TransportPlan) -> f64 {
    let (src, tgt) = (plan.source(), plan.target());
    let images: Vec<Vec<f64>> = src.points().map(|x| model.map(x)).collect();
    plan.entries()
        .iter()
        .map(|e| e.mass * sq_dist(tgt.point(e.target), &images[e.source]))
        .sum()
}

fn truth_target(model: &BrenierModel, p: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    pushforward_measure(p, model)
}

fn two_sided(
    check: Check,
    model: &BrenierModel,
    p: &DiscreteMeasure,
    phat: &DiscreteMeasure,
    qhat: &DiscreteMeasure,
) -> Result<StabilityReport> {
    check_same_dim(model, &[p, phat, qhat])?;
    let q = truth_target(model, p)?;
    let (alpha, beta) = (model.alpha(), model.beta());
    let pi = solve_kantorovich(phat, qhat)?;
    let err = coupling_map_error(model, pi.plan());
    let w2sq_p = w2_squared(phat, p)?;
    let w2sq_q = w2_squared(qhat, &q)?;
    let (w2_p, w2_q) = (w2sq_p.sqrt(), w2sq_q.sqrt());
    let lhs = err / beta;
    let rhs = w2sq_q / alpha + beta * w2sq_p + 2.0 * w2_p * w2_q;
    let gap = semidual_gap(model, pi.plan())?;
    let half_lhs = err / (2.0 * beta);
    let half_rhs = w2sq_q / (2.0 * alpha) + 0.5 * beta * w2sq_p + w2_p * w2_q;
    let components = BTreeMap::from([
        ("coupling_error".to_string(), err),
        ("w2sq_p".to_string(), w2sq_p),
        ("w2sq_q".to_string(), w2sq_q),
        ("w2_p".to_string(), w2_p),
        ("w2_q".to_string(), w2_q),
        ("semidual_gap".to_string(), gap),
        ("half_lhs".to_string(), half_lhs),
        ("half_rhs".to_string(), half_rhs),
        ("half_slack".to_string(), half_rhs - half_lhs),
        ("half_gap_lower_slack".to_string(), gap - half_lhs),
        ("half_gap_upper_slack".to_string(), half_rhs - gap),
    ]);
    Ok(StabilityReport::new(check, lhs, rhs, components, meta(model, phat.len(), qhat.len())))
}

/// `(1/β)·E_π̂‖Y − T0X‖² ≤ (1/α)W²(Q̂,Q) + βW²(P̂,P) + 2W(P̂,P)W(Q̂,Q)` with
/// `Q = T0#P` and `π̂` optimal between `P̂` and `Q̂`. The half-constant form
/// and the semi-dual gap it brackets are recorded as components.
pub fn check_theorem3(
    model: &BrenierModel,
    p: &DiscreteMeasure,
    phat: &DiscreteMeasure,
    qhat: &DiscreteMeasure,
) -> Result<StabilityReport> {
    two_sided(Check::Theorem3, model, p, phat, qhat)
}

/// Source pinned to the truth: `(1/β)·E_π̂‖Y − T0X‖² ≤ (1/α)W²(Q̂,Q)`.
/// The barycentric form `(1/β)·E_P‖T̂(X) − T0(X)‖²` is recorded as a component.
pub fn check_corollary1(model: &BrenierModel, p: &DiscreteMeasure, qhat: &DiscreteMeasure) -> Result<StabilityReport> {
    check_same_dim(model, &[p, qhat])?;
    let q = truth_target(model, p)?;
    let pi = solve_kantorovich(p, qhat)?;
    let err = coupling_map_error(model, pi.plan());
    let w2sq_q = w2_squared(qhat, &q)?;
    let mut components = BTreeMap::from([
        ("coupling_error".to_string(), err),
        ("w2sq_q".to_string(), w2sq_q),
        ("semidual_gap".to_string(), semidual_gap(model, pi.plan())?),
    ]);
    if p.is_uniform() {
        let t = one_nn_estimator(&pi)?;
        let bary: f64 = p
            .iter()
            .map(|(x, w)| w * sq_dist(&t.apply(x), &model.map(x)))
            .sum();
        components.insert("barycentric_error".to_string(), bary);
    }
    let lhs = err / model.beta();
    let rhs = w2sq_q / model.alpha();
    Ok(StabilityReport::new(Check::Corollary1, lhs, rhs, components, meta(model, p.len(), qhat.len())))
}

/// Target pinned to the truth: `(1/β)·E_π̂‖Y − T0X‖² ≤ β·W²(P̂,P)`.
pub fn check_corollary2(model: &BrenierModel, p: &DiscreteMeasure, phat: &DiscreteMeasure) -> Result<StabilityReport> {
    check_same_dim(model, &[p, phat])?;
    let q = truth_target(model, p)?;
    let pi = solve_kantorovich(phat, &q)?;
    let err = coupling_map_error(model, pi.plan());
    let w2sq_p = w2_squared(phat, p)?;
    let components = BTreeMap::from([
        ("coupling_error".to_string(), err),
        ("w2sq_p".to_string(), w2sq_p),
        ("semidual_gap".to_string(), semidual_gap(model, pi.plan())?),
    ]);
    let lhs = err / model.beta();
    let rhs = model.beta() * w2sq_p;
    Ok(StabilityReport::new(Check::Corollary2, lhs, rhs, components, meta(model, phat.len(), q.len())))
}

/// Two-sample form: `P_n` drawn from the finite law `source`, `Q_m` the image
/// under `T0` of an independent draw of size `m`.
pub fn check_corollary3(model: &BrenierModel, source: &Sampler, n: usize, m: usize) -> Result<StabilityReport> {
    let p = source.as_finite().ok_or_else(|| {
        Error::Unsupported("the two-sample check needs a finite source law".into())
    })?;
    check_same_dim(model, &[p])?;
    let pn = source.with_seed(derive_seed(source.seed(), stream::SOURCE, 0)).sample(n)?;
    let xm = source.with_seed(derive_seed(source.seed(), stream::TARGET, 0)).sample(m)?;
    let qm = pushforward_measure(&xm, model)?;
    let mut r = two_sided(Check::Corollary3, model, p, &pn, &qm)?;
    r.meta.n = n;
    r.meta.m = m;
    Ok(r)
}

/// Coupling stability lower bound:
/// `W²(π̂, π0) ≥ max(W²(P̂,P), W²(Q̂,Q))`, with `π0 = (Id, T0)#P`.
pub fn check_corollary4(
    model: &BrenierModel,
    p: &DiscreteMeasure,
    phat: &DiscreteMeasure,
    qhat: &DiscreteMeasure,
) -> Result<StabilityReport> {
    check_same_dim(model, &[p, phat, qhat])?;
    let q = truth_target(model, p)?;
    let pi_hat = solve_kantorovich(phat, qhat)?;
    let pi0 = TransportPlan::graph(p, model)?;
    let w2sq_coupling = w2_squared(&pi_hat.plan().as_measure()?, &pi0.as_measure()?)?;
    let w2sq_p = w2_squared(phat, p)?;
    let w2sq_q = w2_squared(qhat, &q)?;
    let marginal_sum = w2sq_p + w2sq_q;
    let ratio = if marginal_sum > 0.0 { w2sq_coupling / marginal_sum } else { 0.0 };
    let components = BTreeMap::from([
        ("w2sq_coupling".to_string(), w2sq_coupling),
        ("w2sq_p".to_string(), w2sq_p),
        ("w2sq_q".to_string(), w2sq_q),
        ("ratio".to_string(), ratio),
    ]);
    let lhs = w2sq_p.max(w2sq_q);
    Ok(StabilityReport::new(
        Check::Corollary4,
        lhs,
        w2sq_coupling,
        components,
        meta(model, phat.len(), qhat.len()),
    ))
}

/// Seed of the A1/A2 probe run on `psi` before a growth check.
pub const GROWTH_PROBE_SEED: u64 = 0x5eed;

/// Quadratic growth of the semi-dual around `φ0`:
/// `D/(2β) ≤ S(φ0) − S(ψ) ≤ D/(2α)` on `(P, ∇ψ#P)`, where
/// `D = Σ w_i‖∇ψ(x_i) − ∇φ0(x_i)‖²`. The report carries the tighter side.
pub fn check_quadratic_growth(model: &BrenierModel, p: &DiscreteMeasure, psi: &BrenierModel) -> Result<StabilityReport> {
    check_same_dim(model, &[p])?;
    check_dim(model.dim(), psi.dim())?;
    psi.validate_probes(100, GROWTH_PROBE_SEED)?;
    let q = pushforward_measure(p, psi)?;
    let graph = TransportPlan::graph(p, psi)?;
    let gap = semidual_value(model, p, &q)? - coupling_correlation(&graph);
    let disc: f64 = p
        .iter()
        .map(|(x, w)| w * sq_dist(&psi.map(x), &model.map(x)))
        .sum();
    let lower = disc / (2.0 * model.beta());
    let upper = disc / (2.0 * model.alpha());
    let components = BTreeMap::from([
        ("gap".to_string(), gap),
        ("discrepancy".to_string(), disc),
        ("lower".to_string(), lower),
        ("upper".to_string(), upper),
        ("psi_alpha".to_string(), psi.alpha()),
        ("psi_beta".to_string(), psi.beta()),
    ]);
    let (lhs, rhs) = if gap - lower <= upper - gap { (lower, gap) } else { (gap, upper) };
    Ok(StabilityReport::new(Check::QuadraticGrowth, lhs, rhs, components, meta(model, p.len(), q.len())))
}

/// Bregman representation of the semi-dual gap on an optimal plan:
/// `|(S(φ0) − E_π̂⟨X,Y⟩) − E_π̂ B(Y, X)| ≤ 1e-8·(1 + |gap|)`.
pub fn check_lemma1(model: &BrenierModel, phat: &DiscreteMeasure, qhat: &DiscreteMeasure) -> Result<StabilityReport> {
    check_same_dim(model, &[phat, qhat])?;
    let pi = solve_kantorovich(phat, qhat)?;
    lemma1_on(model, &pi)
}

fn lemma1_on(model: &BrenierModel, pi: &Coupling) -> Result<StabilityReport> {
    let direct = semidual_value(model, pi.source(), pi.target())? - coupling_correlation(pi.plan());
    let bregman = semidual_gap(model, pi.plan())?;
    let components = BTreeMap::from([
        ("gap_direct".to_string(), direct),
        ("gap_bregman".to_string(), bregman),
        ("transport_cost".to_string(), pi.cost()),
    ]);
    Ok(StabilityReport::new(
        Check::Lemma1,
        (direct - bregman).abs(),
        IDENTITY_TOL * (1.0 + bregman.abs()),
        components,
        meta(model, pi.source().len(), pi.target().len()),
    ))
}

/// Trial counts and extremes of a batch of reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub check: Check,
    pub trials: usize,
    pub violations: usize,
    pub min_slack: f64,
    /// Largest `ratio` component, when the check records one.
    pub worst_ratio: Option<f64>,
    /// Smallest slack of the half-constant form, when recorded.
    pub min_half_slack: Option<f64>,
}

pub fn summarize(check: Check, reports: &[StabilityReport]) -> SuiteSummary {
    let fold_opt = |key: &str, pick: fn(f64, f64) -> f64| {
        reports
            .iter()
            .filter_map(|r| r.component(key))
            .reduce(pick)
    };
    SuiteSummary {
        check,
        trials: reports.len(),
        violations: reports.iter().filter(|r| r.violated).count(),
        min_slack: reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
        worst_ratio: fold_opt("ratio", f64::max),
        min_half_slack: fold_opt("half_slack", f64::min),
    }
}

/// Parameters of the randomized suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteParams {
    /// Dimensions cycled through by trial index.
    pub dims: Vec<usize>,
    /// Atoms of the finite truth `P`.
    pub n: usize,
    /// Atoms of the finite law and sample sizes for the two-sample check.
    pub support: usize,
    pub sample_n: usize,
    pub sample_m: usize,
    /// Range of the log-uniform curvature draws.
    pub curvature: (f64, f64),
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 3],
            n: 20,
            support: 100,
            sample_n: 30,
            sample_m: 30,
            curvature: (0.2, 5.0),
        }
    }
}

fn trial_seed(master: u64, check: Check, trial: u64) -> u64 {
    derive_seed(derive_seed(master, stream::TRIAL, check as u64), stream::TRIAL, trial)
}

fn random_truth(rng: &mut impl Rng, n: usize, d: usize) -> Result<DiscreteMeasure> {
    if rng.random_bool(0.5) {
        design::random_cloud(rng, n, d, 1.0)
    } else {
        design::random_weighted_cloud(rng, n, d, 1.0)
    }
}

/// One randomized trial of `check`.
pub fn run_trial(check: Check, params: &SuiteParams, master: u64, trial: u64) -> Result<StabilityReport> {
    let seed = trial_seed(master, check, trial);
    let mut rng = rng_from_seed(seed);
    let d = params.dims[trial as usize % params.dims.len()];
    let (lo, hi) = params.curvature;
    let model = design::random_model(&mut rng, d, lo, hi)?;
    let report = match check {
        Check::Theorem3 | Check::Corollary4 => {
            let p = random_truth(&mut rng, params.n, d)?;
            let q = truth_target(&model, &p)?;
            let phat = design::perturb(&mut rng, &p)?;
            let qhat = design::perturb(&mut rng, &q)?;
            if check == Check::Theorem3 {
                check_theorem3(&model, &p, &phat, &qhat)?
            } else {
                check_corollary4(&model, &p, &phat, &qhat)?
            }
        }
        Check::Corollary1 => {
            let p = random_truth(&mut rng, params.n, d)?;
            let qhat = design::perturb(&mut rng, &truth_target(&model, &p)?)?;
            check_corollary1(&model, &p, &qhat)?
        }
        Check::Corollary2 => {
            let p = random_truth(&mut rng, params.n, d)?;
            let phat = design::perturb(&mut rng, &p)?;
            check_corollary2(&model, &p, &phat)?
        }
        Check::Corollary3 => {
            let p = random_truth(&mut rng, params.support, d)?;
            let sampler = Sampler::finite(p, derive_seed(seed, stream::SOURCE, 1));
            check_corollary3(&model, &sampler, params.sample_n, params.sample_m)?
        }
        Check::QuadraticGrowth => {
            let psi = design::random_model(&mut rng, d, lo, hi)?;
            let p = random_truth(&mut rng, params.n, d)?;
            check_quadratic_growth(&model, &p, &psi)?
        }
        Check::Lemma1 => {
            let n = rng.random_range(1..=15);
            let m = rng.random_range(1..=15);
            let phat = random_truth(&mut rng, n, d)?;
            let qhat = random_truth(&mut rng, m, d)?;
            check_lemma1(&model, &phat, &qhat)?
        }
    };
    Ok(report.with_trial(trial, seed))
}

/// `trials` independent trials of `check`, in trial order.
pub fn run_suite(check: Check, params: &SuiteParams, master: u64, trials: usize) -> Result<Vec<StabilityReport>> {
    if params.dims.is_empty() || params.dims.contains(&0) {
        return Err(Error::Config("suite dimensions must be positive".into()));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(check, params, master, t))
        .collect()
}
