//! Exact discrete optimal transport under squared Euclidean cost.
//!
//! [`solve_kantorovich`] returns a vertex-optimal [`Coupling`] carrying dual
//! potentials `(f, g)` with `f_i + g_j <= ‖x_i − y_j‖²`, tight on the support
//! of the plan. [`brute_force_assignment`] enumerates permutations and is
//! only meant as an oracle for small uniform instances.

mod network_simplex;
mod rational;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::measures::{pushforward_measure, DiscreteMeasure, PointMap};

pub use network_simplex::SolverOptions;

/// Absolute tolerance on marginal constraints.
pub const MARGINAL_TOL: f64 = 1e-9;
/// Relative tolerance on dual certificates, scaled by `1 + cost`.
pub const CERTIFICATE_TOL: f64 = 1e-7;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One structural nonzero of a plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// A feasible transport plan between two discrete measures, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    entries: Vec<PlanEntry>,
}

impl TransportPlan {
    /// Validates indices, nonnegativity and both marginals (to `MARGINAL_TOL`).
    pub fn new(
        source: DiscreteMeasure,
        target: DiscreteMeasure,
        mut entries: Vec<PlanEntry>,
    ) -> Result<Self> {
        check_dim(source.dim(), target.dim())?;
        let mut rows = vec![0.0; source.len()];
        let mut cols = vec![0.0; target.len()];
        for e in &entries {
            if e.source >= source.len() || e.target >= target.len() {
                return Err(Error::InvalidMeasure(format!(
                    "plan entry ({}, {}) out of range",
                    e.source, e.target
                )));
            }
            if !(e.mass >= 0.0 && e.mass.is_finite()) {
                return Err(Error::InvalidMeasure(format!("plan mass {}", e.mass)));
            }
            rows[e.source] += e.mass;
            cols[e.target] += e.mass;
        }
        let bad_row = rows.iter().zip(source.weights()).any(|(r, w)| (r - w).abs() > MARGINAL_TOL);
        let bad_col = cols.iter().zip(target.weights()).any(|(c, w)| (c - w).abs() > MARGINAL_TOL);
        if bad_row || bad_col {
            return Err(Error::InvalidMeasure("plan marginals do not match".into()));
        }
        entries.retain(|e| e.mass > 0.0);
        entries.sort_by(|a, b| (a.source, a.target).cmp(&(b.source, b.target)));
        Ok(Self {
            source,
            target,
            entries,
        })
    }

    /// The graph plan `(Id, map)#mu`: atom `i` of `mu` sent to atom `i` of `map#mu`.
    pub fn graph(mu: &DiscreteMeasure, map: &dyn PointMap) -> Result<Self> {
        let target = pushforward_measure(mu, map)?;
        let entries = (0..mu.len())
            .map(|i| PlanEntry {
                source: i,
                target: i,
                mass: mu.weight(i),
            })
            .filter(|e| e.mass > 0.0)
            .collect();
        Ok(Self {
            source: mu.clone(),
            target,
            entries,
        })
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// `Σ π_ij ‖x_i − y_j‖²`.
    pub fn transport_cost(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.mass * sq_dist(self.source.point(e.source), self.target.point(e.target)))
            .sum()
    }

    /// `Σ π_ij ⟨x_i, y_j⟩`.
    pub fn correlation(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.mass * dot(self.source.point(e.source), self.target.point(e.target)))
            .sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut rows = vec![0.0; self.source.len()];
        for e in &self.entries {
            rows[e.source] += e.mass;
        }
        rows
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut cols = vec![0.0; self.target.len()];
        for e in &self.entries {
            cols[e.target] += e.mass;
        }
        cols
    }

    /// Dense `n × m` matrix view.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.target.len()]; self.source.len()];
        for e in &self.entries {
            out[e.source][e.target] += e.mass;
        }
        out
    }

    /// The plan as a measure on R^{2d} with atoms `(x_i, y_j)`.
    pub fn as_measure(&self) -> Result<DiscreteMeasure> {
        let d = self.dim();
        let mut points = Vec::with_capacity(self.entries.len() * 2 * d);
        let mut weights = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            points.extend_from_slice(self.source.point(e.source));
            points.extend_from_slice(self.target.point(e.target));
            weights.push(e.mass);
        }
        DiscreteMeasure::from_flat(2 * d, points, weights)
    }
}

/// An optimal plan with its cost and dual certificate.
#[derive(Clone, Debug)]
pub struct Coupling {
    plan: TransportPlan,
    cost: f64,
    dual_f: Vec<f64>,
    dual_g: Vec<f64>,
    pivots: u64,
}

/// Worst-case residuals of a coupling's optimality certificate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CertificateCheck {
    pub max_marginal_error: f64,
    pub min_entry: f64,
    /// Largest `|f_i + g_j − c_ij| / (1 + c_ij)` over the support.
    pub max_slackness_violation: f64,
    /// Largest `(f_i + g_j − c_ij) / (1 + c_ij)` over all pairs.
    pub max_dual_infeasibility: f64,
    /// `(cost − dual objective) / (1 + cost)`.
    pub relative_duality_gap: f64,
}

impl CertificateCheck {
    pub fn passes(&self) -> bool {
        self.max_marginal_error <= MARGINAL_TOL
            && self.min_entry >= 0.0
            && self.max_slackness_violation <= CERTIFICATE_TOL
            && self.max_dual_infeasibility <= CERTIFICATE_TOL
            && self.relative_duality_gap.abs() <= CERTIFICATE_TOL
    }
}

impl Coupling {
    pub fn plan(&self) -> &TransportPlan {
        &self.plan
    }

    pub fn into_plan(self) -> TransportPlan {
        self.plan
    }

    pub fn source(&self) -> &DiscreteMeasure {
        self.plan.source()
    }

    pub fn target(&self) -> &DiscreteMeasure {
        self.plan.target()
    }

    pub fn entries(&self) -> &[PlanEntry] {
        self.plan.entries()
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn dual_f(&self) -> &[f64] {
        &self.dual_f
    }

    pub fn dual_g(&self) -> &[f64] {
        &self.dual_g
    }

    /// Pivots spent by the solver (0 for oracle-built couplings).
    pub fn pivots(&self) -> u64 {
        self.pivots
    }

    /// `Σ w_i f_i + Σ v_j g_j`.
    pub fn dual_objective(&self) -> f64 {
        let f: f64 = self.dual_f.iter().zip(self.source().weights()).map(|(a, w)| a * w).sum();
        let g: f64 = self.dual_g.iter().zip(self.target().weights()).map(|(a, w)| a * w).sum();
        f + g
    }

    pub fn check_certificate(&self) -> CertificateCheck {
        let (src, tgt) = (self.source(), self.target());
        let marg_r = self
            .plan
            .row_sums()
            .iter()
            .zip(src.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let marg_c = self
            .plan
            .col_sums()
            .iter()
            .zip(tgt.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let min_entry = self.entries().iter().map(|e| e.mass).fold(f64::INFINITY, f64::min);
        let slack = self
            .entries()
            .iter()
            .map(|e| {
                let c = sq_dist(src.point(e.source), tgt.point(e.target));
                (self.dual_f[e.source] + self.dual_g[e.target] - c).abs() / (1.0 + c)
            })
            .fold(0.0, f64::max);
        let mut infeas = f64::NEG_INFINITY;
        for (i, x) in src.points().enumerate() {
            for (j, y) in tgt.points().enumerate() {
                let c = sq_dist(x, y);
                infeas = infeas.max((self.dual_f[i] + self.dual_g[j] - c) / (1.0 + c));
            }
        }
        CertificateCheck {
            max_marginal_error: marg_r.max(marg_c),
            min_entry,
            max_slackness_violation: slack,
            max_dual_infeasibility: infeas,
            relative_duality_gap: (self.cost - self.dual_objective()) / (1.0 + self.cost),
        }
    }

    pub fn to_record(&self) -> CouplingRecord {
        CouplingRecord {
            cost: self.cost,
            entries: self
                .entries()
                .iter()
                .map(|e| (e.source, e.target, e.mass))
                .collect(),
            dual_f: self.dual_f.clone(),
            dual_g: self.dual_g.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }
}

/// JSON form `{"cost", "entries": [[i, j, mass], ..], "dual_f", "dual_g"}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CouplingRecord {
    pub cost: f64,
    pub entries: Vec<(usize, usize, f64)>,
    pub dual_f: Vec<f64>,
    pub dual_g: Vec<f64>,
}

impl CouplingRecord {
    /// Re-attaches the measures the record was solved for.
    pub fn into_coupling(
        self,
        source: DiscreteMeasure,
        target: DiscreteMeasure,
    ) -> Result<Coupling> {
        check_dim(source.len(), self.dual_f.len())?;
        check_dim(target.len(), self.dual_g.len())?;
        let entries = self
            .entries
            .into_iter()
            .map(|(source, target, mass)| PlanEntry {
                source,
                target,
                mass,
            })
            .collect();
        Ok(Coupling {
            plan: TransportPlan::new(source, target, entries)?,
            cost: self.cost,
            dual_f: self.dual_f,
            dual_g: self.dual_g,
            pivots: 0,
        })
    }
}

fn lex_order(mu: &DiscreteMeasure, keep: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keep.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (mu.point(keep[a]), mu.point(keep[b]));
        pa.iter()
            .zip(pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Optimal coupling of `mu` and `nu` for the cost `‖x − y‖²`.
pub fn solve_kantorovich(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Coupling> {
    solve_kantorovich_with(mu, nu, &SolverOptions::default())
}

pub fn solve_kantorovich_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    opts: &SolverOptions,
) -> Result<Coupling> {
    check_dim(mu.dim(), nu.dim())?;
    for m in [mu, nu] {
        let s: f64 = m.weights().iter().sum();
        if (s - 1.0).abs() > MARGINAL_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {s}")));
        }
    }
    let (supply, demand, denom) = rational::integer_marginals(mu.weights(), nu.weights());

    // Zero-mass atoms are left out of the network; their potentials come
    // from c-transforms afterwards.
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| supply[i] > 0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| demand[j] > 0).collect();
    let (n, m) = (rows.len(), cols.len());
    let mut cost = vec![0.0; n * m];
    for (a, &i) in rows.iter().enumerate() {
        let x = mu.point(i);
        for (b, &j) in cols.iter().enumerate() {
            cost[a * m + b] = sq_dist(x, nu.point(j));
        }
    }
    let sup: Vec<i64> = rows.iter().map(|&i| supply[i]).collect();
    let dem: Vec<i64> = cols.iter().map(|&j| demand[j]).collect();
    let row_order = lex_order(mu, &rows);
    let col_order = lex_order(nu, &cols);
    let sol = network_simplex::solve(&cost, &sup, &dem, &row_order, &col_order, opts)?;

    let mut dual_f = vec![f64::NAN; mu.len()];
    let mut dual_g = vec![f64::NAN; nu.len()];
    for (a, &i) in rows.iter().enumerate() {
        dual_f[i] = sol.pot_source[a];
    }
    for (b, &j) in cols.iter().enumerate() {
        dual_g[j] = sol.pot_sink[b];
    }
    for i in (0..mu.len()).filter(|&i| supply[i] == 0) {
        dual_f[i] = cols
            .iter()
            .map(|&j| sq_dist(mu.point(i), nu.point(j)) - dual_g[j])
            .fold(f64::INFINITY, f64::min);
    }
    for j in (0..nu.len()).filter(|&j| demand[j] == 0) {
        dual_g[j] = (0..mu.len())
            .map(|i| sq_dist(mu.point(i), nu.point(j)) - dual_f[i])
            .fold(f64::INFINITY, f64::min);
    }

    let scale = denom as f64;
    let mut entries = Vec::with_capacity(sol.flows.len());
    let mut total = 0.0;
    for &(a, b, f) in &sol.flows {
        let mass = f as f64 / scale;
        total += mass * cost[a * m + b];
        entries.push(PlanEntry {
            source: rows[a],
            target: cols[b],
            mass,
        });
    }
    entries.sort_by(|a, b| (a.source, a.target).cmp(&(b.source, b.target)));
    Ok(Coupling {
        plan: TransportPlan {
            source: mu.clone(),
            target: nu.clone(),
            entries,
        },
        cost: total,
        dual_f,
        dual_g,
        pivots: sol.pivots,
    })
}

/// Squared 2-Wasserstein distance.
pub fn w2_squared(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(solve_kantorovich(mu, nu)?.cost().max(0.0))
}

/// 2-Wasserstein distance.
pub fn w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(w2_squared(mu, nu)?.sqrt())
}

/// `Σ π_ij ⟨x_i, y_j⟩`.
pub fn coupling_correlation(plan: &TransportPlan) -> f64 {
    plan.correlation()
}

/// The plan as a measure on R^{2d}.
pub fn coupling_as_measure(plan: &TransportPlan) -> Result<DiscreteMeasure> {
    plan.as_measure()
}

/// Largest instance size accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_MAX: usize = 8;

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Exhaustive search over permutation couplings of two uniform measures with
/// `n = m <= 8` atoms. Ties go to the lexicographically smallest permutation.
pub fn brute_force_assignment(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Coupling> {
    check_dim(mu.dim(), nu.dim())?;
    let n = mu.len();
    if n != nu.len() {
        return Err(Error::Unsupported(format!(
            "brute force needs equal sizes, got {n} and {}",
            nu.len()
        )));
    }
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Unsupported(format!(
            "brute force limited to {BRUTE_FORCE_MAX} atoms, got {n}"
        )));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::Unsupported("brute force needs uniform weights".into()));
    }
    let c: Vec<Vec<f64>> = mu
        .points()
        .map(|x| nu.points().map(|y| sq_dist(x, y)).collect())
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| c[i][j]).sum();
        if total < best_cost {
            best_cost = total;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }

    // Dual certificate by shortest paths over columns with arc weights
    // c[i][j] − c[i][σ(i)] (no negative cycles at an optimum).
    let mut g = vec![0.0; n];
    for _ in 0..n {
        let mut changed = false;
        for i in 0..n {
            let s = best[i];
            for j in 0..n {
                let cand = g[s] + c[i][j] - c[i][s];
                if cand < g[j] {
                    g[j] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let f: Vec<f64> = (0..n).map(|i| c[i][best[i]] - g[best[i]]).collect();
    let w = 1.0 / n as f64;
    let entries = best
        .iter()
        .enumerate()
        .map(|(i, &j)| PlanEntry {
            source: i,
            target: j,
            mass: w,
        })
        .collect();
    Ok(Coupling {
        plan: TransportPlan::new(mu.clone(), nu.clone(), entries)?,
        cost: best_cost * w,
        dual_f: f,
        dual_g: g,
        pivots: 0,
    })
}
