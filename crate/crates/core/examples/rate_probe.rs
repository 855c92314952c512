//! Runs the shared rate design and prints every fitted slope.
//! Usage: rate_probe [seed] [trials] [e3_eval_factor]

use otlab::experiments::{run_rate_design, ExperimentConfig, Quantity};

fn main() -> otlab::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let mut cfg = ExperimentConfig::default();
    cfg.seed = Some(args.first().copied().unwrap_or(1));
    cfg.trials = Some(args.get(1).copied().unwrap_or(10) as usize);
    cfg.e3_eval_factor = args.get(2).copied().unwrap_or(100) as usize;
    let t = std::time::Instant::now();
    let reports = run_rate_design(&cfg, &[Quantity::Risk, Quantity::E1Proxy, Quantity::E2, Quantity::E3])?;
    for r in &reports {
        println!("{:>8}: slope {:+.4} ± {:.4}", r.quantity.name(), r.fit.slope, r.fit.slope_ci);
        for p in &r.points {
            println!("          n={:>5} mean={:.6e} se={:.2e}", p.n, p.mean, p.std_error);
        }
    }
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
