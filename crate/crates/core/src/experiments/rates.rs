//! Monte-Carlo rate experiments on a Gaussian pair.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::estimators::{e2_nn_distance, e3_voronoi_mass, one_nn_estimator, risk_mc};
use crate::exact_ot::{solve_kantorovich_with, SolverOptions};
use crate::ground_truth::GaussianPair;
use crate::measures::Sampler;
use crate::rng::{derive_seed, stream};

/// Quantities measured by the rate design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    /// `∫‖T̂_1NN − T0‖² dP`.
    Risk,
    /// `W²(P_n, P'_n)` between two independent samples.
    E1Proxy,
    /// `E‖X − nn(X)‖²`.
    E2,
    /// `max_i P(V_i)`.
    E3,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Self::Risk => "risk",
            Self::E1Proxy => "e1-proxy",
            Self::E2 => "e2",
            Self::E3 => "e3",
        }
    }

    pub fn for_kind(kind: ExperimentKind) -> Option<Self> {
        match kind {
            ExperimentKind::RateRisk => Some(Self::Risk),
            ExperimentKind::RateE1 => Some(Self::E1Proxy),
            ExperimentKind::RateE2 => Some(Self::E2),
            ExperimentKind::RateE3 => Some(Self::E3),
            _ => None,
        }
    }
}

/// Least-squares fit of `ln y = intercept + slope·ln n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% half-width from per-size standard errors.
    pub slope_ci: f64,
}

/// Fits a power law to `(n, mean, std_error)` rows.
pub fn fit_power_law(points: &[(f64, f64, f64)]) -> Result<PowerFit> {
    if points.len() < 2 {
        return Err(Error::Config("slope fitting needs at least two sizes".into()));
    }
    if points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(Error::Numerical("log-log fit needs positive sizes and means".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("sizes must differ for slope fitting".into()));
    }
    let coef: Vec<f64> = xs.iter().map(|x| (x - xbar) / sxx).collect();
    let slope: f64 = coef.iter().zip(&ys).map(|(c, y)| c * (y - ybar)).sum();
    // Delta method: var(ln mean) ≈ (se/mean)².
    let var: f64 = coef
        .iter()
        .zip(points)
        .map(|(c, p)| (c * p.2 / p.1).powi(2))
        .sum();
    Ok(PowerFit {
        slope,
        intercept: ybar - slope * xbar,
        slope_ci: 1.96 * var.sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateMeta {
    pub kind: String,
    pub d: usize,
    pub seed: u64,
    pub trials: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub quantity: Quantity,
    pub points: Vec<RatePoint>,
    pub fit: PowerFit,
    pub meta: RateMeta,
}

impl RateReport {
    pub fn from_points(quantity: Quantity, points: Vec<RatePoint>, meta: RateMeta) -> Result<Self> {
        let rows: Vec<(f64, f64, f64)> = points
            .iter()
            .map(|p| (p.n as f64, p.mean, p.std_error))
            .collect();
        let fit = fit_power_law(&rows)?;
        Ok(Self {
            quantity,
            points,
            fit,
            meta,
        })
    }

    /// Trials attempted, counting failures.
    pub fn total_trials(&self) -> usize {
        self.points.iter().map(|p| p.trials + p.failed).sum()
    }
}

/// Per-trial values of the requested quantities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialValues {
    pub risk: Option<f64>,
    pub e1_proxy: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<f64>,
}

impl TrialValues {
    pub fn get(&self, q: Quantity) -> Option<f64> {
        match q {
            Quantity::Risk => self.risk,
            Quantity::E1Proxy => self.e1_proxy,
            Quantity::E2 => self.e2,
            Quantity::E3 => self.e3,
        }
    }
}

fn solver_options(cfg: &ExperimentConfig) -> SolverOptions {
    SolverOptions {
        deadline: cfg
            .solve_timeout_secs
            .map(|s| Instant::now() + Duration::from_secs_f64(s)),
        max_pivots: None,
    }
}

pub fn trial_seed(master: u64, n: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(master, stream::TRIAL, n as u64), stream::TRIAL, trial as u64)
}

/// One trial at size `n`: `X ~ P` and `Y ~ Q` independent with `m = n`.
/// `Ok(None)` marks a solver timeout.
pub fn rate_trial(
    cfg: &ExperimentConfig,
    pair: &GaussianPair,
    quantities: &[Quantity],
    n: usize,
    seed: u64,
) -> Result<Option<TrialValues>> {
    let source: Sampler = pair.source.with_seed(derive_seed(seed, stream::SOURCE, 0));
    let x = source.sample(n)?;
    let mut out = TrialValues::default();
    let timed = |r: Result<f64>| -> Result<Option<f64>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Timeout { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    if quantities.contains(&Quantity::Risk) {
        let y = pair.target.with_seed(derive_seed(seed, stream::TARGET, 0)).sample(n)?;
        let risk = timed(solve_kantorovich_with(&x, &y, &solver_options(cfg)).and_then(|c| {
            let t = one_nn_estimator(&c)?;
            Ok(risk_mc(&t, &pair.model, &source, cfg.n_eval(n))?.mean)
        }))?;
        match risk {
            Some(v) => out.risk = Some(v),
            None => return Ok(None),
        }
    }
    if quantities.contains(&Quantity::E1Proxy) {
        let x2 = pair.source.with_seed(derive_seed(seed, stream::PROXY, 0)).sample(n)?;
        let w = timed(solve_kantorovich_with(&x, &x2, &solver_options(cfg)).map(|c| c.cost()))?;
        match w {
            Some(v) => out.e1_proxy = Some(v),
            None => return Ok(None),
        }
    }
    if quantities.contains(&Quantity::E2) {
        out.e2 = Some(e2_nn_distance(&x, &source, cfg.n_eval(n))?.mean);
    }
    if quantities.contains(&Quantity::E3) {
        // A separate evaluation stream from e2.
        let s3 = source.with_seed(derive_seed(seed, stream::EVAL, 3));
        out.e3 = Some(e3_voronoi_mass(&x, &s3, cfg.e3_eval(n))?.mc);
    }
    Ok(Some(out))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Runs the shared design once and reports every requested quantity.
pub fn run_rate_design(cfg: &ExperimentConfig, quantities: &[Quantity]) -> Result<Vec<RateReport>> {
    cfg.validate()?;
    if !cfg.kind.is_rate() {
        return Err(Error::Config(format!("{} is not a rate experiment", cfg.kind.name())));
    }
    let master = cfg.seed()?;
    let pair = cfg.model.build(cfg.d)?;
    let trials = cfg.trials();
    let jobs: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let results: Vec<Option<TrialValues>> = jobs
        .par_iter()
        .map(|&(n, t)| rate_trial(cfg, &pair, quantities, n, trial_seed(master, n, t)))
        .collect::<Result<_>>()?;

    let meta = RateMeta {
        kind: cfg.kind.name().to_string(),
        d: cfg.d,
        seed: master,
        trials,
        alpha: pair.model.alpha(),
        beta: pair.model.beta(),
    };
    quantities
        .iter()
        .map(|&q| {
            let points = cfg
                .sizes
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let chunk = &results[k * trials..(k + 1) * trials];
                    let values: Vec<f64> = chunk.iter().flatten().filter_map(|v| v.get(q)).collect();
                    let (mean, std_error) = mean_se(&values);
                    RatePoint {
                        n,
                        mean,
                        std_error,
                        trials: values.len(),
                        failed: trials - values.len(),
                    }
                })
                .collect();
            RateReport::from_points(q, points, meta.clone())
        })
        .collect()
}

/// Risk of the 1NN estimator against sample size.
pub fn run_rate_risk(cfg: &ExperimentConfig) -> Result<RateReport> {
    let cfg = ExperimentConfig {
        kind: ExperimentKind::RateRisk,
        ..cfg.clone()
    };
    Ok(run_rate_design(&cfg, &[Quantity::Risk])?.remove(0))
}

/// e1-proxy, e2 or e3 against sample size, per `cfg.kind`.
pub fn run_rate_moments(cfg: &ExperimentConfig) -> Result<RateReport> {
    let q = Quantity::for_kind(cfg.kind)
        .filter(|q| *q != Quantity::Risk)
        .ok_or_else(|| Error::Config(format!("{} is not an e1/e2/e3 experiment", cfg.kind.name())))?;
    Ok(run_rate_design(cfg, &[q])?.remove(0))
}
