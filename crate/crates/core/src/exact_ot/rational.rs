//! Conversion of probability weights to integer masses on a common denominator.

/// Largest denominator tried when recognizing a weight as a fraction.
const MAX_FRACTION_DENOM: u64 = 1 << 20;
/// Largest common denominator kept before falling back to fixed-point scaling.
const MAX_COMMON_DENOM: u64 = 1 << 50;
/// Fixed-point scale for weights that are not recognizable fractions.
const FIXED_SCALE: u64 = 1 << 40;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u64, b: u64) -> Option<u64> {
    (a / gcd(a, b)).checked_mul(b)
}

/// Best rational approximation `p/q` of `x ∈ [0, 1]` with `q <= max_q`,
/// accepted only if it reproduces `x` to within a few ulps.
fn as_fraction(x: f64, max_q: u64) -> Option<(u64, u64)> {
    if x == 0.0 {
        return Some((0, 1));
    }
    let tol = 8.0 * f64::EPSILON * x.max(1e-300);
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > max_q as f64 {
            break;
        }
        let a = a as u64;
        let p2 = a.checked_mul(p1)?.checked_add(p0)?;
        let q2 = a.checked_mul(q1)?.checked_add(q0)?;
        if q2 > max_q {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        if (p1 as f64 / q1 as f64 - x).abs() <= tol {
            return Some((p1, q1));
        }
        let frac = r - a as f64;
        if frac <= 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

/// Integer masses summing exactly to the returned denominator.
fn exact_masses(w: &[f64]) -> Option<(Vec<u64>, u64)> {
    if w.iter().all(|v| *v == w[0]) {
        return Some((vec![1; w.len()], w.len() as u64));
    }
    let fracs: Vec<(u64, u64)> = w
        .iter()
        .map(|&v| as_fraction(v, MAX_FRACTION_DENOM))
        .collect::<Option<_>>()?;
    let mut denom = 1u64;
    for &(_, q) in &fracs {
        denom = lcm(denom, q).filter(|&l| l <= MAX_COMMON_DENOM)?;
    }
    let masses: Vec<u64> = fracs.iter().map(|&(p, q)| p * (denom / q)).collect();
    (masses.iter().sum::<u64>() == denom).then_some((masses, denom))
}

/// Rounds `w * scale` so that the result sums exactly to `scale`
/// (largest-remainder rounding).
fn fixed_masses(w: &[f64], scale: u64) -> Vec<u64> {
    let total: f64 = w.iter().sum();
    let raw: Vec<f64> = w.iter().map(|v| v / total * scale as f64).collect();
    let mut out: Vec<u64> = raw.iter().map(|v| v.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = scale.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if w[i] > 0.0 {
            out[i] += 1;
            missing -= 1;
        }
    }
    out
}

/// Integer supplies and demands with equal totals, plus the common
/// denominator that maps them back to probabilities.
pub(crate) fn integer_marginals(a: &[f64], b: &[f64]) -> (Vec<i64>, Vec<i64>, u64) {
    if let (Some((ma, da)), Some((mb, db))) = (exact_masses(a), exact_masses(b)) {
        if let Some(d) = lcm(da, db).filter(|&d| d <= MAX_COMMON_DENOM) {
            let sa = d / da;
            let sb = d / db;
            return (
                ma.iter().map(|&v| (v * sa) as i64).collect(),
                mb.iter().map(|&v| (v * sb) as i64).collect(),
                d,
            );
        }
    }
    let to_i64 = |v: Vec<u64>| v.into_iter().map(|x| x as i64).collect::<Vec<_>>();
    (
        to_i64(fixed_masses(a, FIXED_SCALE)),
        to_i64(fixed_masses(b, FIXED_SCALE)),
        FIXED_SCALE,
    )
}
