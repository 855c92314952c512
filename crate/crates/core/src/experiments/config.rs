//! Experiment configuration: a JSON document whose fields can all be
//! overridden by `key=value` pairs.

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ground_truth::{gaussian_pair_model, GaussianPair};
use crate::stability::SuiteParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RateRisk,
    RateE1,
    RateE2,
    RateE3,
    StabilitySuite,
    Lemma1Suite,
    GrowthSuite,
}

impl ExperimentKind {
    pub fn is_rate(self) -> bool {
        matches!(self, Self::RateRisk | Self::RateE1 | Self::RateE2 | Self::RateE3)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RateRisk => "rate-risk",
            Self::RateE1 => "rate-e1",
            Self::RateE2 => "rate-e2",
            Self::RateE3 => "rate-e3",
            Self::StabilitySuite => "stability-suite",
            Self::Lemma1Suite => "lemma1-suite",
            Self::GrowthSuite => "growth-suite",
        }
    }
}

/// Covariance given as `c·I`, a diagonal, or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn to_matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        match self {
            Self::Scalar(c) => Ok(DMatrix::identity(d, d) * *c),
            Self::Diagonal(v) => {
                if v.len() != d {
                    return Err(Error::Config(format!("diagonal covariance needs {d} entries, got {}", v.len())));
                }
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)))
            }
            Self::Full(rows) => {
                let m = crate::linalg::from_rows(rows)?;
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::Config(format!("covariance must be {d}x{d}")));
                }
                Ok(m)
            }
        }
    }
}

/// Gaussian source and target laws; the ground-truth map is their OT map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub source_mean: Option<Vec<f64>>,
    pub source_cov: CovSpec,
    pub target_mean: Option<Vec<f64>>,
    /// `None` spreads target variances linearly over `[0.5, 2]`.
    pub target_cov: Option<CovSpec>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            source_mean: None,
            source_cov: CovSpec::Scalar(1.0),
            target_mean: None,
            target_cov: None,
        }
    }
}

impl ModelSpec {
    pub fn build(&self, d: usize) -> Result<GaussianPair> {
        let mean = |m: &Option<Vec<f64>>| -> Result<Vec<f64>> {
            match m {
                None => Ok(vec![0.0; d]),
                Some(v) if v.len() == d => Ok(v.clone()),
                Some(v) => Err(Error::Config(format!("mean needs {d} entries, got {}", v.len()))),
            }
        };
        let target_cov = match &self.target_cov {
            Some(c) => c.to_matrix(d)?,
            None => {
                let diag: Vec<f64> = (0..d)
                    .map(|k| if d == 1 { 1.0 } else { 0.5 + 1.5 * k as f64 / (d - 1) as f64 })
                    .collect();
                CovSpec::Diagonal(diag).to_matrix(d)?
            }
        };
        gaussian_pair_model(mean(&self.source_mean)?, self.source_cov.to_matrix(d)?, mean(&self.target_mean)?, target_cov)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub d: usize,
    pub sizes: Vec<usize>,
    /// Trials per size (rate kinds) or per check (suites). Defaults to 10
    /// for rate kinds and 1000 for suites.
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    /// Permits rate experiments with `d <= 4`.
    pub allow_low_dim: bool,
    pub model: ModelSpec,
    /// Risk and e2 use `max(min_eval, eval_factor·n)` fresh draws.
    pub min_eval: usize,
    pub eval_factor: usize,
    /// e3 uses `max(min_eval, e3_eval_factor·n)` fresh draws.
    pub e3_eval_factor: usize,
    /// Wall-clock cap per OT solve, in seconds.
    pub solve_timeout_secs: Option<f64>,
    pub suite: SuiteParams,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::RateRisk,
            d: 6,
            sizes: vec![128, 256, 512, 1024, 2048, 4096],
            trials: None,
            seed: None,
            allow_low_dim: false,
            model: ModelSpec::default(),
            min_eval: 2000,
            eval_factor: 10,
            e3_eval_factor: 100,
            solve_timeout_secs: None,
            suite: SuiteParams::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(if self.kind.is_rate() { 10 } else { 1000 })
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a master seed is required".into()))
    }

    /// Applies `key=value` overrides. Dotted keys reach nested fields; values
    /// parse as JSON and fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for raw in overrides {
            let raw = raw.as_ref().trim_start_matches("--");
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
            let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                let part = part.replace('-', "_");
                let obj = slot
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("override key {key:?} does not name a field")))?;
                if !obj.contains_key(&part) {
                    return Err(Error::Config(format!("unknown config field {key:?}")));
                }
                slot = obj.get_mut(&part).expect("key checked above");
            }
            *slot = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("bad override: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if !self.kind.is_rate() {
            return Ok(());
        }
        if self.sizes.len() < 2 {
            return Err(Error::Config("slope fitting needs at least two sample sizes".into()));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sample sizes must be strictly increasing".into()));
        }
        if self.sizes[0] == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.trials() == 0 {
            return Err(Error::Config("rate experiments need at least one trial".into()));
        }
        if self.d <= 4 && !self.allow_low_dim {
            return Err(Error::Config(format!(
                "rate experiments need d > 4 (got {}); set allow_low_dim to override",
                self.d
            )));
        }
        if self.min_eval < crate::estimators::MIN_EVAL {
            return Err(Error::Config(format!("min_eval must be at least {}", crate::estimators::MIN_EVAL)));
        }
        if self.solve_timeout_secs.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("solve_timeout_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn n_eval(&self, n: usize) -> usize {
        self.min_eval.max(self.eval_factor * n)
    }

    pub fn e3_eval(&self, n: usize) -> usize {
        self.min_eval.max(self.e3_eval_factor * n)
    }
}
