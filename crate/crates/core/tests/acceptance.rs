//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p otlab --test acceptance`.

use std::fs;
use std::time::{Duration, Instant};

use otlab::exact_ot::{brute_force_assignment, solve_kantorovich};
use otlab::experiments::{run_rate_design, run_suite, ExperimentConfig, ExperimentKind, Quantity, RateReport};
use otlab::ground_truth::BrenierModel;
use otlab::measures::DiscreteMeasure;
use otlab::rng::rng_from_seed;
use otlab::stability::{self, check_corollary1, Check, StabilityReport, SuiteParams};
use rand::Rng;

const MASTER: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn suite(check: Check, trials: usize) -> Result<Vec<StabilityReport>, String> {
    stability::run_suite(check, &SuiteParams::default(), MASTER, trials).map_err(|e| format!("{check:?}: {e}"))
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn cloud(rng: &mut impl Rng, n: usize, d: usize) -> DiscreteMeasure {
    let pts: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    DiscreteMeasure::uniform_flat(d, pts).unwrap()
}

fn solver_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(MASTER);
    let mut worst_cost = 0.0f64;
    let mut worst_marginal = 0.0f64;
    let mut worst_gap = 0.0f64;
    for trial in 0..200 {
        let n = rng.random_range(2..=7);
        let d = 1 + trial % 3;
        let (mu, nu) = (cloud(&mut rng, n, d), cloud(&mut rng, n, d));
        let (fast, slow) = match (solve_kantorovich(&mu, &nu), brute_force_assignment(&mu, &nu)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return outcome(false, format!("trial {trial}: {e}")),
        };
        worst_cost = worst_cost.max((fast.cost() - slow.cost()).abs() / slow.cost().abs().max(1e-300));
        let cert = fast.check_certificate();
        worst_marginal = worst_marginal.max(cert.max_marginal_error);
        worst_gap = worst_gap.max(cert.relative_duality_gap.abs());
        if !cert.passes() {
            return outcome(false, format!("trial {trial}: certificate {cert:?}"));
        }
    }
    let t = start.elapsed();
    outcome(
        worst_cost <= 1e-9 && worst_marginal <= 1e-9 && worst_gap <= 1e-7 && within(t, 10),
        format!(
            "200 instances; max rel cost err {worst_cost:.2e}, marginal err {worst_marginal:.2e}, duality gap {worst_gap:.2e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn lemma1_identity() -> Outcome {
    let start = Instant::now();
    let reports = match suite(Check::Lemma1, 1000) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    let worst = reports
        .iter()
        .map(|r| {
            let (a, b) = (r.component("gap_direct").unwrap(), r.component("gap_bregman").unwrap());
            (a - b).abs() / (1.0 + b.abs())
        })
        .fold(0.0, f64::max);
    let t = start.elapsed();
    outcome(
        reports.len() == 1000 && worst <= 1e-8 && within(t, 30),
        format!("1000 instances; max relative residual {worst:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

fn stability_bounds() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for check in [Check::Theorem3, Check::Corollary1, Check::Corollary2, Check::Corollary3] {
        let reports = match suite(check, 1000) {
            Ok(r) => r,
            Err(e) => return outcome(false, e),
        };
        let s = stability::summarize(check, &reports);
        pass &= s.trials == 1000 && s.violations == 0;
        lines.push(format!("{} {} viol, min slack {:.2e}", check.name(), s.violations, s.min_slack));
    }
    let model = BrenierModel::scaling(1, 2.0).unwrap();
    let p = DiscreteMeasure::uniform_flat(1, vec![-1.0, 1.0]).unwrap();
    let qhat = DiscreteMeasure::uniform_flat(1, vec![-2.0, 3.0]).unwrap();
    let witness = check_corollary1(&model, &p, &qhat).map(|r| r.slack).unwrap_or(f64::NAN);
    let t = start.elapsed();
    pass &= witness.abs() <= 1e-12 && within(t, 120);
    outcome(
        pass,
        format!("{}; d=1 witness slack {witness:.1e}, {:.2}s", lines.join("; "), t.as_secs_f64()),
    )
}

fn coupling_lower_bound() -> Outcome {
    let reports = match suite(Check::Corollary4, 200) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    let mut ratios: Vec<f64> = reports.iter().filter_map(|r| r.component("ratio")).collect();
    let bad = reports.iter().filter(|r| r.slack < -1e-9).count();
    ratios.sort_by(f64::total_cmp);
    let q = |f: f64| ratios[((ratios.len() - 1) as f64 * f) as usize];
    outcome(
        bad == 0 && reports.len() == 200,
        format!(
            "200 trials, {bad} violations; coupling/marginal ratio min {:.3} median {:.3} max {:.3}",
            q(0.0),
            q(0.5),
            q(1.0)
        ),
    )
}

fn growth_sandwich() -> Outcome {
    let reports = match suite(Check::QuadraticGrowth, 500) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    let bad = reports
        .iter()
        .filter(|r| {
            let c = |k: &str| r.component(k).unwrap();
            let tol = 1e-9 * (1.0 + c("upper").abs());
            c("gap") < c("lower") - tol || c("gap") > c("upper") + tol
        })
        .count();
    let min_slack = reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    outcome(
        bad == 0 && reports.len() == 500,
        format!("500 pairs, {bad} violations; min slack {min_slack:.2e}"),
    )
}

fn slope_outcome(r: &RateReport, target: f64, tol: f64, t: Duration) -> Outcome {
    let failed: usize = r.points.iter().map(|p| p.failed).sum();
    let err = (r.fit.slope - target).abs();
    outcome(
        err <= tol && failed == 0 && within(t, 20 * 60),
        format!(
            "{} slope {:.4} ± {:.4} (target {target:.4} ± {tol}), {failed} failed trials, {:.1}s",
            r.quantity.name(),
            r.fit.slope,
            r.fit.slope_ci,
            t.as_secs_f64()
        ),
    )
}

fn rates() -> (Outcome, Vec<Outcome>) {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::RateRisk);
    cfg.seed = Some(MASTER);
    let start = Instant::now();
    let quantities = [Quantity::Risk, Quantity::E1Proxy, Quantity::E2, Quantity::E3];
    let reports = match run_rate_design(&cfg, &quantities) {
        Ok(r) => r,
        Err(e) => {
            let o = || outcome(false, format!("rate design failed: {e}"));
            return (o(), vec![o()]);
        }
    };
    let t = start.elapsed();
    let find = |q: Quantity| reports.iter().find(|r| r.quantity == q).unwrap();
    let risk = slope_outcome(find(Quantity::Risk), -1.0 / 3.0, 0.12, t);
    let moments = vec![
        slope_outcome(find(Quantity::E2), -1.0 / 3.0, 0.12, t),
        slope_outcome(find(Quantity::E3), -1.0, 0.2, t),
        slope_outcome(find(Quantity::E1Proxy), -1.0 / 3.0, 0.15, t),
    ];
    (risk, moments)
}

fn run_twice(cfg: &ExperimentConfig) -> Result<bool, String> {
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = ExperimentConfig {
            output_dir: dir.path().to_path_buf(),
            ..cfg.clone()
        };
        let summary = run_suite(&cfg).map_err(|e| e.to_string())?;
        let files: Vec<(String, Vec<u8>)> = summary
            .files
            .iter()
            .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(f).unwrap()))
            .collect();
        bytes.push(files);
    }
    Ok(bytes[0] == bytes[1] && !bytes[0].is_empty())
}

fn determinism() -> Outcome {
    let mut kinds = Vec::new();
    for (kind, trials) in [
        (ExperimentKind::StabilitySuite, 60),
        (ExperimentKind::Lemma1Suite, 100),
        (ExperimentKind::GrowthSuite, 100),
        (ExperimentKind::RateE2, 3),
    ] {
        let mut cfg = ExperimentConfig::for_kind(kind);
        cfg.seed = Some(7);
        cfg.trials = Some(trials);
        cfg.sizes = vec![64, 128, 256];
        match run_twice(&cfg) {
            Ok(true) => kinds.push(kind.name()),
            Ok(false) => return outcome(false, format!("{} reports differ between runs", kind.name())),
            Err(e) => return outcome(false, format!("{}: {e}", kind.name())),
        }
    }
    outcome(true, format!("byte-identical reports for {}", kinds.join(", ")))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 solver exactness", solver_exactness()),
        ("2 semi-dual gap identity", lemma1_identity()),
        ("3 stability inequalities", stability_bounds()),
        ("4 coupling lower bound", coupling_lower_bound()),
        ("5 quadratic growth sandwich", growth_sandwich()),
    ];
    let (risk, moments) = rates();
    results.push(("6 risk rate", risk));
    for m in moments {
        results.push(("7 nearest-neighbour scalings", m));
    }
    results.push(("8 determinism", determinism()));

    let mut failures = 0;
    for (name, o) in &results {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.pass);
    }
    println!("{} of {} checks passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
