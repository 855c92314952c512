//! Transport-map estimators fitted from samples, and the error functionals
//! used to analyse them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exact_ot::{solve_kantorovich, sq_dist, Coupling};
use crate::ground_truth::{BrenierModel, ModelRecord};
use crate::kdtree::KdTree;
use crate::linalg;
use crate::measures::{DiscreteMeasure, PointMap, Sampler};
use crate::rng::{derive_seed, stream};

/// Smallest Monte-Carlo evaluation size accepted.
pub const MIN_EVAL: usize = 100;
/// Largest histogram grid (`cells_per_axis^d`).
pub const MAX_HISTOGRAM_CELLS: usize = 1 << 20;

/// Nearest-neighbor extension of a barycentric projection.
#[derive(Clone, Debug)]
pub struct OneNnMap {
    tree: KdTree,
    out_dim: usize,
    barycenters: Vec<f64>,
}

impl OneNnMap {
    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn barycenter(&self, i: usize) -> &[f64] {
        &self.barycenters[i * self.out_dim..(i + 1) * self.out_dim]
    }

    /// Index of the Voronoi cell containing `x`.
    pub fn cell(&self, x: &[f64]) -> usize {
        self.tree.nearest(x).0
    }
}

/// Regular grid over an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells_per_axis: usize,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells_per_axis: usize) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if cells_per_axis == 0 {
            return Err(Error::Config("cells_per_axis must be at least 1".into()));
        }
        if lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Config("grid box needs finite lo < hi on every axis".into()));
        }
        let total = (cells_per_axis as u128).checked_pow(lo.len() as u32);
        if total.is_none_or(|t| t > MAX_HISTOGRAM_CELLS as u128) {
            return Err(Error::Config(format!(
                "grid with {cells_per_axis}^{} cells is too large",
                lo.len()
            )));
        }
        Ok(Self {
            lo,
            hi,
            cells_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_axis.pow(self.dim() as u32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Cell index of `x`; points outside the box go to the nearest boundary cell.
    pub fn cell(&self, x: &[f64]) -> usize {
        let k = self.cells_per_axis;
        let mut idx = 0;
        for (axis, &v) in x.iter().enumerate() {
            let (a, b) = (self.lo[axis], self.hi[axis]);
            let t = ((v - a) / (b - a) * k as f64).floor();
            let c = if t.is_nan() { 0 } else { t.clamp(0.0, (k - 1) as f64) as usize };
            idx = idx * k + c;
        }
        idx
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let k = self.cells_per_axis;
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut rest = cell;
        for axis in (0..d).rev() {
            let c = rest % k;
            rest /= k;
            let w = (self.hi[axis] - self.lo[axis]) / k as f64;
            out[axis] = self.lo[axis] + (c as f64 + 0.5) * w;
        }
        out
    }
}

/// Histogram plug-in map: one image point per grid cell.
#[derive(Clone, Debug)]
pub struct HistogramMap {
    grid: Grid,
    out_dim: usize,
    images: Vec<f64>,
}

impl HistogramMap {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn image(&self, cell: usize) -> &[f64] {
        &self.images[cell * self.out_dim..(cell + 1) * self.out_dim]
    }
}

#[derive(Clone, Debug)]
pub enum TransportMapEstimate {
    ExactModel(BrenierModel),
    OneNn(OneNnMap),
    Histogram(HistogramMap),
    Affine { a: DMatrix<f64>, b: DVector<f64> },
}

impl TransportMapEstimate {
    pub fn affine(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        Ok(Self::Affine {
            a,
            b: DVector::from_vec(b),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::ExactModel(m) => m.dim(),
            Self::OneNn(m) => m.tree.dim(),
            Self::Histogram(h) => h.grid.dim(),
            Self::Affine { a, .. } => a.ncols(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::ExactModel(_) => "exact-model",
            Self::OneNn(_) => "one-nn",
            Self::Histogram(_) => "histogram",
            Self::Affine { .. } => "affine",
        }
    }

    pub fn to_record(&self) -> EstimateRecord {
        match self {
            Self::ExactModel(m) => EstimateRecord::ExactModel {
                model: m.to_record(),
            },
            Self::OneNn(m) => EstimateRecord::OneNn {
                points: rows(m.tree.points_flat(), m.tree.dim()),
                barycenters: rows(&m.barycenters, m.out_dim),
            },
            Self::Histogram(h) => EstimateRecord::Histogram {
                grid: h.grid.clone(),
                images: rows(&h.images, h.out_dim),
            },
            Self::Affine { a, b } => EstimateRecord::Affine {
                a: linalg::to_rows(a),
                b: b.as_slice().to_vec(),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<EstimateRecord>(s)?.into_estimate()
    }
}

fn rows(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(<[f64]>::to_vec).collect()
}

fn flatten(rows: Vec<Vec<f64>>, what: &str) -> Result<(usize, Vec<f64>)> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{what} must be a nonempty rectangular array")));
    }
    Ok((d, rows.into_iter().flatten().collect()))
}

impl PointMap for TransportMapEstimate {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        match self {
            Self::ExactModel(m) => m.dim(),
            Self::OneNn(m) => m.out_dim,
            Self::Histogram(h) => h.out_dim,
            Self::Affine { a, .. } => a.nrows(),
        }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::ExactModel(m) => m.map_into(x, out),
            Self::OneNn(m) => out.copy_from_slice(m.barycenter(m.cell(x))),
            Self::Histogram(h) => out.copy_from_slice(h.image(h.grid.cell(x))),
            Self::Affine { a, b } => {
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = b[r];
                    for (c, xc) in x.iter().enumerate() {
                        acc += a[(r, c)] * xc;
                    }
                    *o = acc;
                }
            }
        }
    }
}

/// JSON form of an estimate, tagged by `kind`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimateRecord {
    ExactModel {
        model: ModelRecord,
    },
    OneNn {
        points: Vec<Vec<f64>>,
        barycenters: Vec<Vec<f64>>,
    },
    Histogram {
        grid: Grid,
        images: Vec<Vec<f64>>,
    },
    Affine {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

impl EstimateRecord {
    pub fn into_estimate(self) -> Result<TransportMapEstimate> {
        match self {
            Self::ExactModel { model } => Ok(TransportMapEstimate::ExactModel(model.into_model()?)),
            Self::OneNn {
                points,
                barycenters,
            } => {
                if points.len() != barycenters.len() {
                    return Err(Error::Config("one barycenter per point is required".into()));
                }
                let (d, pts) = flatten(points, "points")?;
                let (out_dim, barycenters) = flatten(barycenters, "barycenters")?;
                Ok(TransportMapEstimate::OneNn(OneNnMap {
                    tree: KdTree::new(d, pts)?,
                    out_dim,
                    barycenters,
                }))
            }
            Self::Histogram { grid, images } => {
                let grid = Grid::new(grid.lo, grid.hi, grid.cells_per_axis)?;
                if images.len() != grid.num_cells() {
                    return Err(Error::Config("one image per grid cell is required".into()));
                }
                let (out_dim, images) = flatten(images, "images")?;
                Ok(TransportMapEstimate::Histogram(HistogramMap {
                    grid,
                    out_dim,
                    images,
                }))
            }
            Self::Affine { a, b } => TransportMapEstimate::affine(linalg::from_rows(&a)?, b),
        }
    }
}

/// 1NN extension of the barycentric projection of `c`:
/// `x ↦ Σ_j n·π̂_{i(x) j}·Y_j` with `i(x)` the nearest source atom.
pub fn one_nn_estimator(c: &Coupling) -> Result<TransportMapEstimate> {
    let (src, tgt) = (c.source(), c.target());
    if !src.is_uniform() {
        return Err(Error::Unsupported(
            "the 1NN estimator needs a uniform empirical source measure".into(),
        ));
    }
    let (n, d) = (src.len(), tgt.dim());
    let mut bary = vec![0.0; n * d];
    let mut row_mass = vec![0.0; n];
    for e in c.entries() {
        let w = e.mass * n as f64;
        row_mass[e.source] += w;
        for (b, y) in bary[e.source * d..(e.source + 1) * d].iter_mut().zip(tgt.point(e.target)) {
            *b += w * y;
        }
    }
    for (i, s) in row_mass.iter().enumerate() {
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!(
                "row {i} of the coupling carries n·mass {s}, expected 1"
            )));
        }
    }
    Ok(TransportMapEstimate::OneNn(OneNnMap {
        tree: KdTree::new(src.dim(), src.points_flat().to_vec())?,
        out_dim: d,
        barycenters: bary,
    }))
}

/// Histogram plug-in: bins both samples on `grid`, couples the two histograms
/// on cell centers, and sends each source cell to the plan-weighted average of
/// the target-cell sample barycenters. Empty source cells borrow the image of
/// the nearest nonempty cell.
pub fn histogram_plugin_estimator(
    x: &DiscreteMeasure,
    y: &DiscreteMeasure,
    grid: &Grid,
) -> Result<TransportMapEstimate> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidMeasure("histogram estimator needs nonempty samples".into()));
    }
    check_dim(grid.dim(), x.dim())?;
    check_dim(grid.dim(), y.dim())?;
    if !x.points().chain(y.points()).all(|p| grid.contains(p)) {
        return Err(Error::Config("grid box must contain every sample point".into()));
    }
    let d = grid.dim();
    let bin = |mu: &DiscreteMeasure| {
        let mut mass = std::collections::BTreeMap::<usize, (f64, Vec<f64>)>::new();
        for (p, w) in mu.iter() {
            let entry = mass.entry(grid.cell(p)).or_insert_with(|| (0.0, vec![0.0; d]));
            entry.0 += w;
            entry.1.iter_mut().zip(p).for_each(|(s, v)| *s += w * v);
        }
        mass
    };
    let hx = bin(x);
    let hy = bin(y);
    let x_cells: Vec<usize> = hx.keys().copied().collect();
    let y_cells: Vec<usize> = hy.keys().copied().collect();
    let centers = |cells: &[usize]| -> Vec<f64> { cells.iter().flat_map(|&c| grid.center(c)).collect() };
    let px = DiscreteMeasure::from_flat(d, centers(&x_cells), hx.values().map(|v| v.0).collect())?;
    let py = DiscreteMeasure::from_flat(d, centers(&y_cells), hy.values().map(|v| v.0).collect())?;
    let y_bary: Vec<Vec<f64>> = hy
        .values()
        .map(|(w, s)| s.iter().map(|v| v / w).collect())
        .collect();
    let plan = solve_kantorovich(&px, &py)?;

    let mut image = vec![vec![0.0; d]; x_cells.len()];
    for e in plan.entries() {
        let w = e.mass / px.weight(e.source);
        image[e.source]
            .iter_mut()
            .zip(&y_bary[e.target])
            .for_each(|(o, v)| *o += w * v);
    }

    let filled = KdTree::new(d, px.points_flat().to_vec())?;
    let mut images = Vec::with_capacity(grid.num_cells() * d);
    let mut next = 0;
    for cell in 0..grid.num_cells() {
        if next < x_cells.len() && x_cells[next] == cell {
            images.extend_from_slice(&image[next]);
            next += 1;
        } else {
            let (k, _) = filled.nearest(&grid.center(cell));
            images.extend_from_slice(&image[k]);
        }
    }
    Ok(TransportMapEstimate::Histogram(HistogramMap {
        grid: grid.clone(),
        out_dim: d,
        images,
    }))
}

/// `Σ_i w_i ‖T̂(X_i) − T0(X_i)‖²` over the sample `x`.
pub fn in_sample_error(t: &dyn PointMap, model: &BrenierModel, x: &DiscreteMeasure) -> Result<f64> {
    check_dim(model.dim(), x.dim())?;
    check_dim(t.input_dim(), x.dim())?;
    let mut a = vec![0.0; t.output_dim()];
    let mut b = vec![0.0; model.dim()];
    Ok(x.iter()
        .map(|(p, w)| {
            t.apply_into(p, &mut a);
            model.map_into(p, &mut b);
            w * sq_dist(&a, &b)
        })
        .sum())
}

/// Mean and standard error of a Monte-Carlo average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn finish(&self) -> McEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        McEstimate {
            mean: self.mean,
            std_error: (var / self.n as f64).sqrt(),
        }
    }
}

fn check_eval(n_eval: usize) -> Result<()> {
    if n_eval < MIN_EVAL {
        return Err(Error::Config(format!("n_eval must be at least {MIN_EVAL}, got {n_eval}")));
    }
    Ok(())
}

/// Fresh evaluation sampler: same law, seed on the evaluation stream.
fn eval_sampler(sampler: &Sampler) -> Sampler {
    sampler.with_seed(derive_seed(sampler.seed(), stream::EVAL, 0))
}

/// Monte-Carlo estimate of `∫‖T̂ − T0‖² dP` from `n_eval` fresh draws of `P`.
pub fn risk_mc(
    t: &dyn PointMap,
    model: &BrenierModel,
    source: &Sampler,
    n_eval: usize,
) -> Result<McEstimate> {
    check_eval(n_eval)?;
    check_dim(model.dim(), source.dim())?;
    check_dim(t.input_dim(), source.dim())?;
    let d = source.dim();
    let eval = eval_sampler(source);
    let mut draws = eval.stream();
    let (mut x, mut a, mut b) = (vec![0.0; d], vec![0.0; t.output_dim()], vec![0.0; d]);
    let mut acc = Moments::default();
    for _ in 0..n_eval {
        draws.draw_into(&mut x);
        t.apply_into(&x, &mut a);
        model.map_into(&x, &mut b);
        acc.push(sq_dist(&a, &b));
    }
    Ok(acc.finish())
}

/// Monte-Carlo estimate of `E‖X − nn(X)‖²` given the sample `x`.
pub fn e2_nn_distance(x: &DiscreteMeasure, source: &Sampler, n_eval: usize) -> Result<McEstimate> {
    check_eval(n_eval)?;
    check_dim(x.dim(), source.dim())?;
    let tree = KdTree::new(x.dim(), x.points_flat().to_vec())?;
    let eval = eval_sampler(source);
    let mut draws = eval.stream();
    let mut q = vec![0.0; x.dim()];
    let mut acc = Moments::default();
    for _ in 0..n_eval {
        draws.draw_into(&mut q);
        acc.push(tree.nearest(&q).1);
    }
    Ok(acc.finish())
}

/// `Σ_a p_a ‖p_a − nn(p_a)‖²` for a finite law `p`.
pub fn e2_exact(x: &DiscreteMeasure, p: &DiscreteMeasure) -> Result<f64> {
    check_dim(x.dim(), p.dim())?;
    let tree = KdTree::new(x.dim(), x.points_flat().to_vec())?;
    Ok(p.iter().map(|(q, w)| w * tree.nearest(q).1).sum())
}

/// Largest Voronoi-cell mass `max_i P(V_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoronoiMass {
    /// Fraction of fresh draws landing in the heaviest cell.
    pub mc: f64,
    /// Exact value when the law is finite.
    pub exact: Option<f64>,
}

/// Cell masses of the Voronoi partition of `x` under the finite law `p`.
pub fn voronoi_masses(x: &DiscreteMeasure, p: &DiscreteMeasure) -> Result<Vec<f64>> {
    check_dim(x.dim(), p.dim())?;
    let tree = KdTree::new(x.dim(), x.points_flat().to_vec())?;
    let mut mass = vec![0.0; x.len()];
    for (q, w) in p.iter() {
        mass[tree.nearest(q).0] += w;
    }
    Ok(mass)
}

/// Monte-Carlo estimate (and exact value for finite laws) of `max_i P(V_i)`.
pub fn e3_voronoi_mass(x: &DiscreteMeasure, source: &Sampler, n_eval: usize) -> Result<VoronoiMass> {
    check_eval(n_eval)?;
    check_dim(x.dim(), source.dim())?;
    let tree = KdTree::new(x.dim(), x.points_flat().to_vec())?;
    let eval = eval_sampler(source);
    let mut draws = eval.stream();
    let mut q = vec![0.0; x.dim()];
    let mut counts = vec![0usize; x.len()];
    for _ in 0..n_eval {
        draws.draw_into(&mut q);
        counts[tree.nearest(&q).0] += 1;
    }
    let mc = counts.iter().copied().max().unwrap_or(0) as f64 / n_eval as f64;
    let exact = match source.as_finite() {
        Some(p) => Some(voronoi_masses(x, p)?.into_iter().fold(0.0, f64::max)),
        None => None,
    };
    Ok(VoronoiMass { mc, exact })
}

/// Exact `Σ_a p_a ‖T̂(p_a) − T0(p_a)‖²` for a finite law `p`.
pub fn l2_error_exact(t: &dyn PointMap, model: &BrenierModel, p: &DiscreteMeasure) -> Result<f64> {
    in_sample_error(t, model, p)
}

/// Terms of the nearest-neighbor error decomposition on a finite law:
/// `‖T̂ − T0‖²_{L²(P)} ≤ 2·e3·n·ê1 + 2β²·e2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NnDecomposition {
    pub l2_error: f64,
    pub in_sample: f64,
    pub e2: f64,
    pub e3: f64,
    pub n: usize,
    pub beta: f64,
}

impl NnDecomposition {
    /// `C = max(2, 2β²)`.
    pub fn constant(&self) -> f64 {
        2.0f64.max(2.0 * self.beta * self.beta)
    }

    /// `2·e3·n·ê1 + 2β²·e2`.
    pub fn split_bound(&self) -> f64 {
        2.0 * self.e3 * self.n as f64 * self.in_sample + 2.0 * self.beta * self.beta * self.e2
    }

    /// `C·(ê1·n·e3 + e2)`.
    pub fn bound(&self) -> f64 {
        self.constant() * (self.in_sample * self.n as f64 * self.e3 + self.e2)
    }

    /// `‖T̂ − T0‖² / bound`.
    pub fn ratio(&self) -> f64 {
        let b = self.bound();
        if b > 0.0 {
            self.l2_error / b
        } else {
            0.0
        }
    }
}

/// Evaluates every term of the 1NN decomposition exactly on a finite law `p`.
pub fn nn_decomposition(
    estimate: &TransportMapEstimate,
    model: &BrenierModel,
    x: &DiscreteMeasure,
    p: &DiscreteMeasure,
) -> Result<NnDecomposition> {
    Ok(NnDecomposition {
        l2_error: l2_error_exact(estimate, model, p)?,
        in_sample: in_sample_error(estimate, model, x)?,
        e2: e2_exact(x, p)?,
        e3: voronoi_masses(x, p)?.into_iter().fold(0.0, f64::max),
        n: x.len(),
        beta: model.beta(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_ot::brute_force_assignment;

    fn line(xs: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform_flat(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn split_mass_barycenters() {
        let c = solve_kantorovich(&line(&[0.0, 1.0]), &line(&[0.0, 0.5, 1.0])).unwrap();
        let t = one_nn_estimator(&c).unwrap();
        assert!((t.apply(&[0.2])[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((t.apply(&[0.9])[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((t.apply(&[0.0])[0] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_source_maps_to_target_mean() {
        let c = solve_kantorovich(&line(&[4.0]), &line(&[1.0, 2.0])).unwrap();
        let t = one_nn_estimator(&c).unwrap();
        for x in [-10.0, 0.0, 7.0] {
            assert!((t.apply(&[x])[0] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_coupling_returns_matched_atoms() {
        let x = line(&[0.0, 1.0, 2.0]);
        let y = line(&[5.0, 3.0, 4.0]);
        let c = brute_force_assignment(&x, &y).unwrap();
        let t = one_nn_estimator(&c).unwrap();
        assert_eq!(t.apply(&[0.0]), vec![3.0]);
        assert_eq!(t.apply(&[1.1]), vec![4.0]);
        assert_eq!(t.apply(&[2.0]), vec![5.0]);
    }

    #[test]
    fn nonuniform_source_is_rejected() {
        let x = DiscreteMeasure::from_flat(1, vec![0.0, 1.0], vec![0.25, 0.75]).unwrap();
        let c = solve_kantorovich(&x, &line(&[0.0])).unwrap();
        assert!(matches!(one_nn_estimator(&c), Err(Error::Unsupported(_))));
    }

    #[test]
    fn in_sample_error_hand_value() {
        let model = BrenierModel::scaling(1, 2.0).unwrap();
        let c = solve_kantorovich(&line(&[-1.0, 1.0]), &line(&[-2.0, 3.0])).unwrap();
        let t = one_nn_estimator(&c).unwrap();
        let err = in_sample_error(&t, &model, c.source()).unwrap();
        assert!((err - 0.5).abs() < 1e-12);
        let exact = TransportMapEstimate::ExactModel(model.clone());
        assert_eq!(in_sample_error(&exact, &model, c.source()).unwrap(), 0.0);
    }

    #[test]
    fn histogram_single_cell_is_constant_mean() {
        let grid = Grid::new(vec![0.0], vec![4.0], 1).unwrap();
        let t = histogram_plugin_estimator(&line(&[0.5, 3.0]), &line(&[1.0, 2.0, 4.0]), &grid).unwrap();
        for x in [0.0, 2.0, 3.9] {
            assert!((t.apply(&[x])[0] - 7.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_two_cells() {
        let grid = Grid::new(vec![0.0], vec![2.0], 2).unwrap();
        let t = histogram_plugin_estimator(&line(&[0.1, 0.9]), &line(&[1.1, 1.9]), &grid).unwrap();
        // Source cell [0,1) carries all mass and the empty cell borrows its image.
        assert!((t.apply(&[0.5])[0] - 1.5).abs() < 1e-12);
        assert!((t.apply(&[1.5])[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_identical_samples_fix_cell_barycenters() {
        let grid = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], 3).unwrap();
        let pts = vec![0.1, 0.1, 0.2, 0.25, 0.9, 0.5, 0.5, 0.95, 0.55, 0.9];
        let x = DiscreteMeasure::uniform_flat(2, pts).unwrap();
        let t = histogram_plugin_estimator(&x, &x, &grid).unwrap();
        let TransportMapEstimate::Histogram(h) = &t else { unreachable!() };
        let mut sums = std::collections::BTreeMap::<usize, (f64, [f64; 2])>::new();
        for p in x.points() {
            let e = sums.entry(grid.cell(p)).or_insert((0.0, [0.0; 2]));
            e.0 += 1.0;
            e.1[0] += p[0];
            e.1[1] += p[1];
        }
        for (cell, (k, s)) in sums {
            let img = h.image(cell);
            assert!((img[0] - s[0] / k).abs() < 1e-12 && (img[1] - s[1] / k).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_rejects_points_outside_box() {
        let grid = Grid::new(vec![0.0], vec![1.0], 2).unwrap();
        assert!(histogram_plugin_estimator(&line(&[2.0]), &line(&[0.5]), &grid).is_err());
    }

    #[test]
    fn e3_on_finite_law_is_exact() {
        let p = Sampler::finite(line(&[0.0, 1.0, 2.0, 3.0]), 3);
        let v = e3_voronoi_mass(&line(&[0.4, 2.6]), &p, 1000).unwrap();
        assert_eq!(v.exact, Some(0.5));
        let single = e3_voronoi_mass(&line(&[1.0]), &p, 100).unwrap();
        assert_eq!((single.mc, single.exact), (1.0, Some(1.0)));
    }

    #[test]
    fn risk_of_constant_map_under_point_mass() {
        let model = BrenierModel::scaling(2, 1.0).unwrap();
        let p = Sampler::finite(DiscreteMeasure::point_mass(vec![1.0, -1.0]).unwrap(), 0);
        let t = TransportMapEstimate::affine(DMatrix::zeros(2, 2), vec![3.0, 1.0]).unwrap();
        let r = risk_mc(&t, &model, &p, 100).unwrap();
        assert_eq!(r.mean, 8.0);
        assert_eq!(r.std_error, 0.0);
        assert!(risk_mc(&t, &model, &p, 99).is_err());
    }

    #[test]
    fn estimate_json_round_trips() {
        let c = solve_kantorovich(&line(&[0.0, 1.0]), &line(&[0.0, 0.5, 1.0])).unwrap();
        let t = one_nn_estimator(&c).unwrap();
        let json = t.to_json().unwrap();
        assert!(json.contains("\"kind\":\"one-nn\""));
        let back = TransportMapEstimate::from_json(&json).unwrap();
        for x in [-1.0, 0.3, 0.7, 2.0] {
            assert_eq!(back.apply(&[x]), t.apply(&[x]));
        }
        let grid = Grid::new(vec![0.0], vec![2.0], 4).unwrap();
        let h = histogram_plugin_estimator(&line(&[0.1, 0.9]), &line(&[1.1, 1.9]), &grid).unwrap();
        let back = TransportMapEstimate::from_json(&h.to_json().unwrap()).unwrap();
        assert_eq!(back.apply(&[1.7]), h.apply(&[1.7]));
    }
}
