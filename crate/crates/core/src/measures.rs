//! Discrete measures, synthetic samplers and pushforwards.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::rng_from_seed;

/// Weight sums further than this from one are rejected instead of renormalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A weighted point cloud in R^d. Points are stored row-major in one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        for p in &points {
            check_dim(dim, p.len())?;
        }
        Self::from_flat(dim, points.into_iter().flatten().collect(), weights)
    }

    /// Builds a measure from a row-major coordinate buffer.
    pub fn from_flat(dim: usize, points: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be at least 1".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::InvalidMeasure(format!(
                "coordinate buffer of length {} is not a multiple of d = {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if n == 0 {
            return Err(Error::InvalidMeasure("a measure needs at least one atom".into()));
        }
        if weights.len() != n {
            return Err(Error::InvalidMeasure(format!(
                "{n} atoms but {} weights",
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidMeasure(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        if total != 1.0 && !weights.iter().all(|w| *w == weights[0]) {
            for w in &mut weights {
                *w /= total;
            }
        }
        Ok(Self { dim, points, weights })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn uniform_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        Self::from_flat(dim, points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn point_mass(x: Vec<f64>) -> Result<Self> {
        let dim = x.len();
        Self::from_flat(dim, x, vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points().zip(self.weights.iter().copied())
    }

    /// True when every weight is identical.
    pub fn is_uniform(&self) -> bool {
        self.weights.iter().all(|w| *w == self.weights[0])
    }

    /// Same weights, every coordinate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            points: self.points.iter().map(|v| v * c).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Same weights, atoms relabelled so that atom `k` of the result is atom
    /// `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut points = Vec::with_capacity(self.points.len());
        for &i in order {
            points.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            points,
            weights: order.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.iter() {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += w * v;
            }
        }
        m
    }

    pub fn to_record(&self) -> MeasureRecord {
        MeasureRecord {
            d: self.dim,
            points: self.points().map(<[f64]>::to_vec).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: MeasureRecord = serde_json::from_str(s)?;
        rec.into_measure()
    }

    /// CSV with one atom per row; the last column is the weight.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for (p, wt) in self.iter() {
            let mut row: Vec<String> = p.iter().map(|v| format_f64(*v)).collect();
            row.push(format_f64(wt));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut dim = None;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::InvalidMeasure(
                    "CSV rows need at least one coordinate and a weight".into(),
                ));
            }
            let d = rec.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::InvalidMeasure("ragged CSV rows".into()));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::InvalidMeasure(format!("bad number {field:?}")))?;
                if k < d {
                    points.push(v);
                } else {
                    weights.push(v);
                }
            }
        }
        Self::from_flat(dim.unwrap_or(0), points, weights)
    }

    /// Reads `.json` or `.csv` depending on the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            Self::read_csv(std::fs::File::open(path)?)
        } else {
            Self::from_json(&std::fs::read_to_string(path)?)
        }
    }
}

/// Shortest round-trippable rendering of a float.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// JSON form `{"d": .., "points": [[..], ..], "weights": [..]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MeasureRecord {
    pub d: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl MeasureRecord {
    pub fn into_measure(self) -> Result<DiscreteMeasure> {
        for p in &self.points {
            check_dim(self.d, p.len())?;
        }
        DiscreteMeasure::from_flat(
            self.d,
            self.points.into_iter().flatten().collect(),
            self.weights,
        )
    }
}

/// A map R^d -> R^d' that can push measures and samplers forward.
pub trait PointMap: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize {
        self.input_dim()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(x, &mut out);
        out
    }
}

/// A map given by a closure, mostly for tests and ad-hoc transforms.
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> PointMap for FnMap<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// `map#mu`: atoms moved by `map`, weights kept bit-for-bit.
pub fn pushforward_measure(mu: &DiscreteMeasure, map: &dyn PointMap) -> Result<DiscreteMeasure> {
    check_dim(map.input_dim(), mu.dim())?;
    let out_dim = map.output_dim();
    let mut points = vec![0.0; mu.len() * out_dim];
    for (p, out) in mu.points().zip(points.chunks_exact_mut(out_dim)) {
        map.apply_into(p, out);
    }
    Ok(DiscreteMeasure {
        dim: out_dim,
        points,
        weights: mu.weights.clone(),
    })
}

/// `(Σ_i w_i ‖x_i‖^r)^{1/r}`.
pub fn moment(mu: &DiscreteMeasure, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Config(format!("moment order must be positive, got {r}")));
    }
    let s: f64 = mu
        .iter()
        .map(|(p, w)| w * p.iter().map(|v| v * v).sum::<f64>().sqrt().powf(r))
        .sum();
    Ok(s.powf(1.0 / r))
}

/// Multivariate normal with a cached symmetric square root of the covariance.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    root: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(cov.nrows(), mean.len())?;
        linalg::check_spd(&cov, "covariance")?;
        let root = linalg::sym_sqrt(&cov);
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            root,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

#[derive(Clone)]
pub enum SamplerKind {
    Gaussian(Gaussian),
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Finite(DiscreteMeasure),
    Pushforward {
        base: Box<SamplerKind>,
        map: Arc<dyn PointMap>,
    },
}

impl fmt::Debug for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerKind::Gaussian(g) => f.debug_tuple("Gaussian").field(g).finish(),
            SamplerKind::UniformBox { lo, hi } => f
                .debug_struct("UniformBox")
                .field("lo", lo)
                .field("hi", hi)
                .finish(),
            SamplerKind::Finite(m) => f.debug_tuple("Finite").field(&m.len()).finish(),
            SamplerKind::Pushforward { base, map } => f
                .debug_struct("Pushforward")
                .field("base", base)
                .field("out_dim", &map.output_dim())
                .finish(),
        }
    }
}

impl SamplerKind {
    pub fn dim(&self) -> usize {
        match self {
            SamplerKind::Gaussian(g) => g.dim(),
            SamplerKind::UniformBox { lo, .. } => lo.len(),
            SamplerKind::Finite(m) => m.dim(),
            SamplerKind::Pushforward { map, .. } => map.output_dim(),
        }
    }
}

/// A distribution to draw i.i.d. points from, together with its seed.
#[derive(Clone, Debug)]
pub struct Sampler {
    kind: SamplerKind,
    seed: u64,
}

impl Sampler {
    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>, seed: u64) -> Result<Self> {
        Ok(Self {
            kind: SamplerKind::Gaussian(Gaussian::new(mean, cov)?),
            seed,
        })
    }

    pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::Config("box must have dimension at least 1".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(Error::Config("box needs finite lo < hi on every axis".into()));
        }
        Ok(Self {
            kind: SamplerKind::UniformBox { lo, hi },
            seed,
        })
    }

    pub fn finite(measure: DiscreteMeasure, seed: u64) -> Self {
        Self {
            kind: SamplerKind::Finite(measure),
            seed,
        }
    }

    /// Law of `map(X)` for `X` drawn from `base`; keeps the base seed.
    pub fn pushforward(base: Sampler, map: Arc<dyn PointMap>) -> Result<Self> {
        check_dim(map.input_dim(), base.dim())?;
        Ok(Self {
            kind: SamplerKind::Pushforward {
                base: Box::new(base.kind),
                map,
            },
            seed: base.seed,
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind.clone(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> &SamplerKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// The underlying finite measure, when this sampler draws from one.
    pub fn as_finite(&self) -> Option<&DiscreteMeasure> {
        match &self.kind {
            SamplerKind::Finite(m) => Some(m),
            _ => None,
        }
    }

    /// `n` i.i.d. draws with uniform weights `1/n`.
    pub fn sample(&self, n: usize) -> Result<DiscreteMeasure> {
        if n == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        let dim = self.dim();
        let mut stream = self.stream();
        let mut points = vec![0.0; n * dim];
        for out in points.chunks_exact_mut(dim) {
            stream.draw_into(out);
        }
        Ok(DiscreteMeasure {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// A point-by-point draw stream; `sample(n)` is the first `n` draws of it.
    pub fn stream(&self) -> SampleStream<'_> {
        SampleStream {
            rng: rng_from_seed(self.seed),
            prepared: Prepared::new(&self.kind),
        }
    }
}

/// `sample(sampler, n)`.
pub fn sample(sampler: &Sampler, n: usize) -> Result<DiscreteMeasure> {
    sampler.sample(n)
}

enum Prepared<'a> {
    Gaussian(&'a Gaussian, Vec<f64>),
    UniformBox(&'a [f64], &'a [f64]),
    Finite(&'a DiscreteMeasure, Option<WeightedIndex<f64>>),
    Pushforward(Box<Prepared<'a>>, &'a dyn PointMap, Vec<f64>),
}

impl<'a> Prepared<'a> {
    fn new(kind: &'a SamplerKind) -> Self {
        match kind {
            SamplerKind::Gaussian(g) => Prepared::Gaussian(g, vec![0.0; g.dim()]),
            SamplerKind::UniformBox { lo, hi } => Prepared::UniformBox(lo, hi),
            SamplerKind::Finite(m) => {
                let index = if m.len() > 1 {
                    Some(WeightedIndex::new(m.weights()).expect("validated weights"))
                } else {
                    None
                };
                Prepared::Finite(m, index)
            }
            SamplerKind::Pushforward { base, map } => {
                let buf = vec![0.0; base.dim()];
                Prepared::Pushforward(Box::new(Prepared::new(base)), map.as_ref(), buf)
            }
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Prepared::Gaussian(g, z) => {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let d = z.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = g.mean[r];
                    for c in 0..d {
                        acc += g.root[(r, c)] * z[c];
                    }
                    *o = acc;
                }
            }
            Prepared::UniformBox(lo, hi) => {
                for ((o, a), b) in out.iter_mut().zip(lo.iter()).zip(hi.iter()) {
                    let u: f64 = rng.random();
                    *o = a + (b - a) * u;
                }
            }
            Prepared::Finite(m, index) => {
                let i = match index {
                    Some(ix) => ix.sample(rng),
                    None => 0,
                };
                out.copy_from_slice(m.point(i));
            }
            Prepared::Pushforward(base, map, buf) => {
                base.draw(rng, buf);
                map.apply_into(buf, out);
            }
        }
    }
}

pub struct SampleStream<'a> {
    rng: ChaCha8Rng,
    prepared: Prepared<'a>,
}

impl SampleStream<'_> {
    pub fn draw_into(&mut self, out: &mut [f64]) {
        self.prepared.draw(&mut self.rng, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(points: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform_flat(1, points.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(DiscreteMeasure::from_flat(1, vec![], vec![]).is_err());
        assert!(DiscreteMeasure::from_flat(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::from_flat(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0], vec![0.0, 1.0]], vec![0.5, 0.5]).is_err());
        assert!(DiscreteMeasure::from_flat(0, vec![], vec![]).is_err());
    }

    #[test]
    fn renormalizes_rounding_noise() {
        let m = DiscreteMeasure::from_flat(1, vec![0.0, 1.0], vec![0.5 + 4e-10, 0.5]).unwrap();
        let s: f64 = m.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_sampling_repeats_the_atom() {
        let s = Sampler::finite(DiscreteMeasure::point_mass(vec![0.0]).unwrap(), 3);
        let out = s.sample(3).unwrap();
        assert_eq!(out.points_flat(), &[0.0, 0.0, 0.0]);
        assert!(out.weights().iter().all(|w| *w == 1.0 / 3.0));
    }

    #[test]
    fn gaussian_sampling_is_deterministic() {
        let s = Sampler::gaussian(vec![0.0; 2], DMatrix::identity(2, 2), 11).unwrap();
        assert_eq!(s.sample(2).unwrap(), s.sample(2).unwrap());
        assert_ne!(s.sample(2).unwrap(), s.with_seed(12).sample(2).unwrap());
    }

    #[test]
    fn gaussian_moments_match_at_large_n() {
        let n = 100_000;
        let s = Sampler::gaussian(vec![0.0], DMatrix::identity(1, 1), 5).unwrap();
        let x = s.sample(n).unwrap();
        let mean = x.points_flat().iter().sum::<f64>() / n as f64;
        let var = x.points_flat().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // standard errors are 1/sqrt(n) ~ 3.2e-3 and sqrt(2/n) ~ 4.5e-3
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn non_spd_covariance_is_a_configuration_error() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Sampler::gaussian(vec![0.0; 2], cov, 0),
            Err(Error::Config(_))
        ));
        assert!(Sampler::gaussian(vec![0.0; 2], DMatrix::identity(2, 2), 0)
            .unwrap()
            .sample(0)
            .is_err());
    }

    #[test]
    fn pushforward_examples() {
        let mu = m1(&[1.0, 2.0]);
        let id = FnMap::new(1, |x: &[f64], o: &mut [f64]| o.copy_from_slice(x));
        assert_eq!(pushforward_measure(&mu, &id).unwrap(), mu);
        let double = FnMap::new(1, |x: &[f64], o: &mut [f64]| o[0] = 2.0 * x[0]);
        assert_eq!(pushforward_measure(&mu, &double).unwrap(), m1(&[2.0, 4.0]));
        let shift = FnMap::new(1, |x: &[f64], o: &mut [f64]| o[0] = x[0] + 3.0);
        assert_eq!(
            pushforward_measure(&m1(&[0.0, 1.0]), &shift).unwrap(),
            m1(&[3.0, 4.0])
        );
        let planar = FnMap::new(2, |x: &[f64], o: &mut [f64]| o.copy_from_slice(x));
        assert!(matches!(
            pushforward_measure(&mu, &planar),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn moment_examples() {
        assert_eq!(moment(&DiscreteMeasure::point_mass(vec![0.0, 0.0]).unwrap(), 3.0).unwrap(), 0.0);
        assert!((moment(&m1(&[-1.0, 1.0]), 4.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((moment(&m1(&[0.0, 2.0]), 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(moment(&m1(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn uniform_box_and_pushforward_sampler() {
        let s = Sampler::uniform_box(vec![-1.0, 2.0], vec![1.0, 3.0], 9).unwrap();
        let x = s.sample(500).unwrap();
        assert!(x.points().all(|p| (-1.0..1.0).contains(&p[0]) && (2.0..3.0).contains(&p[1])));
        let shift: Arc<dyn PointMap> =
            Arc::new(FnMap::new(2, |x: &[f64], o: &mut [f64]| {
                o[0] = x[0] + 10.0;
                o[1] = x[1];
            }));
        let y = Sampler::pushforward(s.clone(), shift).unwrap().sample(500).unwrap();
        for (a, b) in x.points().zip(y.points()) {
            assert_eq!(a[0] + 10.0, b[0]);
            assert_eq!(a[1], b[1]);
        }
    }

    #[test]
    fn json_and_csv_forms() {
        let m = DiscreteMeasure::new(vec![vec![0.5, -1.0], vec![2.0, 3.25]], vec![0.25, 0.75])
            .unwrap();
        let json = m.to_json().unwrap();
        assert!(json.starts_with("{\"d\":2,"));
        assert_eq!(DiscreteMeasure::from_json(&json).unwrap(), m);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0.5,-1.0,0.25\n2.0,3.25,0.75\n");
        assert_eq!(DiscreteMeasure::read_csv(buf.as_slice()).unwrap(), m);
    }
}
