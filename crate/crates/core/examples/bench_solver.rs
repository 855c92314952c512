use std::time::Instant;

use nalgebra::DMatrix;
use otlab::exact_ot::solve_kantorovich;
use otlab::measures::Sampler;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let n = args.first().copied().unwrap_or(1024);
    let d = args.get(1).copied().unwrap_or(6);
    let p = Sampler::gaussian(vec![0.0; d], DMatrix::identity(d, d), 1).unwrap();
    let q = Sampler::gaussian(vec![0.0; d], DMatrix::identity(d, d) * 2.0, 2).unwrap();
    let x = p.sample(n).unwrap();
    let y = q.sample(n).unwrap();
    let t = Instant::now();
    let c = solve_kantorovich(&x, &y).unwrap();
    println!(
        "n={n} d={d} cost={:.6} pivots={} time={:.2?}",
        c.cost(),
        c.pivots(),
        t.elapsed()
    );
}
