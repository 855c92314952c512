//! Experiment driver: configuration, rate experiments, harness suites and
//! report emission.

pub mod config;
pub mod rates;
pub mod report;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{CovSpec, ExperimentConfig, ExperimentKind, ModelSpec};
pub use rates::{
    fit_power_law, run_rate_design, run_rate_moments, run_rate_risk, PowerFit, Quantity, RateMeta, RatePoint,
    RateReport,
};

use crate::error::{Error, Result};
use crate::stability::{self, Check, StabilityReport, SuiteSummary};

/// Checks run by each suite kind.
pub fn suite_checks(kind: ExperimentKind) -> &'static [Check] {
    match kind {
        ExperimentKind::StabilitySuite => &[
            Check::Theorem3,
            Check::Corollary1,
            Check::Corollary2,
            Check::Corollary3,
            Check::Corollary4,
        ],
        ExperimentKind::Lemma1Suite => &[Check::Lemma1],
        ExperimentKind::GrowthSuite => &[Check::QuadraticGrowth],
        _ => &[],
    }
}

/// Outcome of one configured run.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub suites: Vec<SuiteSummary>,
    pub rates: Vec<RateReport>,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    /// Reports whose exact inequality failed.
    pub fn violations(&self) -> usize {
        self.suites.iter().map(|s| s.violations).sum()
    }
}

/// Runs the suites of `cfg.kind` without writing anything.
pub fn run_suites(cfg: &ExperimentConfig) -> Result<Vec<(Check, Vec<StabilityReport>)>> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    suite_checks(cfg.kind)
        .iter()
        .map(|&c| Ok((c, stability::run_suite(c, &cfg.suite, seed, cfg.trials())?)))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Runs the configured experiment and writes its reports to `cfg.output_dir`.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    let stem = cfg.kind.name();
    let mut files = Vec::new();
    let mut summary = RunSummary {
        kind: cfg.kind,
        seed,
        suites: Vec::new(),
        rates: Vec::new(),
        files: Vec::new(),
    };

    if let Some(q) = Quantity::for_kind(cfg.kind) {
        let report = run_rate_design(cfg, &[q])?.remove(0);
        let csv = dir.join(format!("{stem}.csv"));
        report::write_rate_csv(&report, create(&csv)?)?;
        let json = dir.join(format!("{stem}.json"));
        write_json(&json, &report)?;
        let svg = dir.join(format!("{stem}.svg"));
        fs::write(&svg, report::render_svg(&report))?;
        files.extend([csv, json, svg]);
        summary.rates.push(report);
    } else {
        let results = run_suites(cfg)?;
        let all: Vec<StabilityReport> = results.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
        let csv = dir.join(format!("{stem}.csv"));
        report::write_stability_csv(&all, create(&csv)?)?;
        let json = dir.join(format!("{stem}.json"));
        write_json(&json, &all)?;
        summary.suites = results.iter().map(|(c, r)| stability::summarize(*c, r)).collect();
        let sum_path = dir.join(format!("{stem}-summary.json"));
        write_json(&sum_path, &summary.suites)?;
        files.extend([csv, json, sum_path]);
    }
    summary.files = files;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_suite_writes_empty_reports() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::for_kind(ExperimentKind::StabilitySuite);
        cfg.trials = Some(0);
        cfg.seed = Some(1);
        cfg.output_dir = dir.path().to_path_buf();
        let s = run_suite(&cfg).unwrap();
        assert_eq!(s.violations(), 0);
        assert!(s.suites.iter().all(|x| x.trials == 0));
        let json = fs::read_to_string(dir.path().join("stability-suite.json")).unwrap();
        assert_eq!(json.trim(), "[]");
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let cfg = ExperimentConfig::for_kind(ExperimentKind::Lemma1Suite);
        assert!(matches!(run_suite(&cfg), Err(Error::Config(_))));
    }
}
