use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use otlab::estimators::{histogram_plugin_estimator, one_nn_estimator, Grid, TransportMapEstimate};
use otlab::exact_ot::{solve_kantorovich_with, SolverOptions};
use otlab::experiments::{
    self, report, ExperimentConfig, ExperimentKind, Quantity, RateMeta, RunSummary,
};
use otlab::measures::{DiscreteMeasure, PointMap};
use otlab::{Error, Result};

const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "otlab",
    version,
    about = "Exact discrete optimal transport, map estimators and stability experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the squared-Euclidean Kantorovich problem between two measure files.
    Solve {
        /// Source measure (.json or .csv with a trailing weight column).
        source: PathBuf,
        /// Target measure.
        target: PathBuf,
        /// Write the coupling JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Wall-clock cap for the solve, in seconds.
        #[arg(long)]
        timeout_secs: Option<f64>,
    },
    /// Fit a transport-map estimator from a source and a target sample.
    Estimate {
        source: PathBuf,
        target: PathBuf,
        #[arg(long, value_enum, default_value_t = EstimatorKind::OneNn)]
        kind: EstimatorKind,
        /// Histogram cells per axis over the joint bounding box.
        #[arg(long, default_value_t = 8)]
        cells: usize,
        /// Write the estimator JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV of query points (one per row, no weights) to push through the estimate.
        #[arg(long)]
        query: Option<PathBuf>,
        /// Where to write the mapped query points; stdout when omitted.
        #[arg(long, requires = "query")]
        mapped: Option<PathBuf>,
    },
    /// Run a stability, lemma1 or growth suite. Unknown `--key=value` flags
    /// override configuration fields.
    Stability(ExperimentArgs),
    /// Run a rate experiment. Unknown `--key=value` flags override
    /// configuration fields.
    Rates(ExperimentArgs),
    /// Re-render the log-log plot of a rate table.
    Report {
        /// Rate table written by `otlab rates`.
        table: PathBuf,
        /// JSON report whose quantity and metadata label the plot.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = QuantityArg::Risk)]
        quantity: QuantityArg,
        #[arg(long, default_value_t = 6)]
        d: usize,
        /// SVG path; defaults to the table path with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; required so every run is reproducible.
    #[arg(long)]
    seed: u64,
    /// Experiment kind; defaults to the subcommand's canonical kind.
    #[arg(long)]
    kind: Option<String>,
    #[arg(skip)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorKind {
    OneNn,
    Histogram,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantityArg {
    Risk,
    E1Proxy,
    E2,
    E3,
}

impl From<QuantityArg> for Quantity {
    fn from(q: QuantityArg) -> Self {
        match q {
            QuantityArg::Risk => Quantity::Risk,
            QuantityArg::E1Proxy => Quantity::E1Proxy,
            QuantityArg::E2 => Quantity::E2,
            QuantityArg::E3 => Quantity::E3,
        }
    }
}

/// Pulls `--key=value` arguments that the experiment subcommands do not
/// declare, so they can be applied as configuration overrides.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let is_experiment = args
        .iter()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .is_some_and(|s| s == "stability" || s == "rates");
    if !is_experiment {
        return (args, Vec::new());
    }
    let known = ["config", "seed", "kind", "help"];
    let (mut kept, mut overrides) = (Vec::new(), Vec::new());
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((key, _)) if !known.contains(&key) => overrides.push(a),
            _ => kept.push(a),
        }
    }
    (kept, overrides)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::Timeout { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn io_err(p: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display())))
}

fn load(p: &Path) -> Result<DiscreteMeasure> {
    DiscreteMeasure::load(p).map_err(|e| match e {
        Error::Io(e) => io_err(p, e),
        e => e,
    })
}

fn read_points(p: &Path) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(p).map_err(|e| io_err(p, e))?;
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let row = rec?
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidMeasure(format!("bad coordinate {s:?} in {}", p.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn solve(source: &Path, target: &Path, out: Option<&Path>, timeout: Option<f64>) -> Result<()> {
    let (mu, nu) = (load(source)?, load(target)?);
    if timeout.is_some_and(|t| !(t > 0.0)) {
        return Err(Error::Config("--timeout-secs must be positive".into()));
    }
    let opts = SolverOptions {
        deadline: timeout.map(|s| Instant::now() + Duration::from_secs_f64(s)),
        max_pivots: None,
    };
    let c = solve_kantorovich_with(&mu, &nu, &opts)?;
    write_output(out, &c.to_json()?)?;
    eprintln!(
        "cost {:?}  pivots {}  support {}",
        c.cost(),
        c.pivots(),
        c.entries().len()
    );
    Ok(())
}

fn bounding_grid(x: &DiscreteMeasure, y: &DiscreteMeasure, cells: usize) -> Result<Grid> {
    let d = x.dim();
    let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
    for p in x.points().chain(y.points()) {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    for k in 0..d {
        let pad = 1e-9 * (1.0 + (hi[k] - lo[k]).abs());
        lo[k] -= pad;
        hi[k] += pad;
    }
    Grid::new(lo, hi, cells)
}

struct EstimateArgs<'a> {
    source: &'a Path,
    target: &'a Path,
    kind: EstimatorKind,
    cells: usize,
    out: Option<&'a Path>,
    query: Option<&'a Path>,
    mapped: Option<&'a Path>,
}

fn estimate(a: EstimateArgs<'_>) -> Result<()> {
    let (x, y) = (load(a.source)?, load(a.target)?);
    let t: TransportMapEstimate = match a.kind {
        EstimatorKind::OneNn => {
            one_nn_estimator(&solve_kantorovich_with(&x, &y, &SolverOptions::default())?)?
        }
        EstimatorKind::Histogram => {
            if x.dim() != y.dim() {
                return Err(Error::DimensionMismatch {
                    expected: x.dim(),
                    got: y.dim(),
                });
            }
            histogram_plugin_estimator(&x, &y, &bounding_grid(&x, &y, a.cells)?)?
        }
    };
    match a.out {
        Some(_) => write_output(a.out, &t.to_json()?)?,
        None if a.query.is_none() => write_output(None, &t.to_json()?)?,
        None => {}
    }
    if let Some(q) = a.query {
        let mut buf = Vec::new();
        {
            let mut wr = csv::Writer::from_writer(&mut buf);
            for row in read_points(q)? {
                if row.len() != t.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: t.dim(),
                        got: row.len(),
                    });
                }
                wr.write_record(t.apply(&row).iter().map(|v| format!("{v:?}")))?;
            }
            wr.flush()?;
        }
        let text = String::from_utf8(buf).expect("csv output is utf-8");
        write_output(a.mapped, &text)?;
    }
    Ok(())
}

fn experiment_config(
    args: &ExperimentArgs,
    default_kind: ExperimentKind,
) -> Result<ExperimentConfig> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => ExperimentConfig::for_kind(default_kind),
    };
    let mut extra = args.overrides.clone();
    if let Some(k) = &args.kind {
        extra.push(format!("kind={k}"));
    }
    extra.push(format!("seed={}", args.seed));
    let cfg = base.with_overrides(&extra)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_suites(s: &RunSummary) {
    println!(
        "{:<16} {:>7} {:>10} {:>14} {:>12}",
        "check", "trials", "violations", "min slack", "worst ratio"
    );
    for r in &s.suites {
        let ratio = r.worst_ratio.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<16} {:>7} {:>10} {:>14.6e} {:>12}",
            r.check.name(),
            r.trials,
            r.violations,
            r.min_slack,
            ratio
        );
    }
}

fn print_rates(s: &RunSummary) {
    for r in &s.rates {
        println!(
            "{} (d = {}): slope {:.4} ± {:.4}",
            r.quantity.name(),
            r.meta.d,
            r.fit.slope,
            r.fit.slope_ci
        );
        println!(
            "{:>8} {:>14} {:>12} {:>7} {:>7}",
            "n", "mean", "std error", "trials", "failed"
        );
        for p in &r.points {
            println!(
                "{:>8} {:>14.6e} {:>12.3e} {:>7} {:>7}",
                p.n, p.mean, p.std_error, p.trials, p.failed
            );
        }
    }
}

fn run_experiment(args: &ExperimentArgs, rates: bool) -> Result<u8> {
    let default_kind = if rates {
        ExperimentKind::RateRisk
    } else {
        ExperimentKind::StabilitySuite
    };
    let cfg = experiment_config(args, default_kind)?;
    if cfg.kind.is_rate() != rates {
        let cmd = if rates { "rates" } else { "stability" };
        return Err(Error::Config(format!(
            "kind {} cannot run under `{cmd}`",
            cfg.kind.name()
        )));
    }
    let summary = experiments::run_suite(&cfg)?;
    if rates {
        print_rates(&summary);
    } else {
        print_suites(&summary);
    }
    for f in &summary.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(if summary.violations() > 0 {
        EXIT_VIOLATION
    } else {
        0
    })
}

fn render_report(
    table: &Path,
    meta: Option<&Path>,
    quantity: Quantity,
    d: usize,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let (quantity, meta) = match meta {
        Some(p) => {
            let r: experiments::RateReport =
                serde_json::from_str(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?;
            (r.quantity, r.meta)
        }
        None => (
            quantity,
            RateMeta {
                kind: String::new(),
                d,
                seed: 0,
                trials: 0,
                alpha: f64::NAN,
                beta: f64::NAN,
            },
        ),
    };
    let file = fs::File::open(table).map_err(|e| io_err(table, e))?;
    let r = report::rate_report_from_csv(quantity, meta, file)?;
    let out = out.map_or_else(|| table.with_extension("svg"), Path::to_path_buf);
    fs::write(&out, report::render_svg(&r)).map_err(|e| io_err(&out, e))?;
    println!(
        "{}: slope {:.4} ± {:.4}",
        r.quantity.name(),
        r.fit.slope,
        r.fit.slope_ci
    );
    Ok(out)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Solve {
            source,
            target,
            out,
            timeout_secs,
        } => solve(&source, &target, out.as_deref(), timeout_secs).map(|_| 0),
        Cmd::Estimate {
            source,
            target,
            kind,
            cells,
            out,
            query,
            mapped,
        } => estimate(EstimateArgs {
            source: &source,
            target: &target,
            kind,
            cells,
            out: out.as_deref(),
            query: query.as_deref(),
            mapped: mapped.as_deref(),
        })
        .map(|_| 0),
        Cmd::Stability(a) => run_experiment(&a, false),
        Cmd::Rates(a) => run_experiment(&a, true),
        Cmd::Report {
            table,
            meta,
            quantity,
            d,
            out,
        } => {
            let path = render_report(&table, meta.as_deref(), quantity.into(), d, out.as_deref())?;
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let mut cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Cmd::Stability(a) | Cmd::Rates(a) = &mut cli.cmd {
        a.overrides = overrides;
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_for_experiments_only() {
        let (kept, over) = split_overrides(strs(&[
            "otlab",
            "rates",
            "--seed=3",
            "--d=5",
            "--sizes=[8,16]",
        ]));
        assert_eq!(kept, strs(&["otlab", "rates", "--seed=3"]));
        assert_eq!(over, strs(&["--d=5", "--sizes=[8,16]"]));
        let (kept, over) = split_overrides(strs(&["otlab", "solve", "a", "b", "--out=x"]));
        assert_eq!(kept.len(), 5);
        assert!(over.is_empty());
    }

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }
}
