//! Exact nearest-neighbor search.
//!
//! Ties on distance resolve to the lowest point index, so every query lands
//! in exactly one Voronoi cell even on lattice-valued data.

use crate::error::{Error, Result};
use crate::exact_ot::sq_dist;

const LEAF_SIZE: usize = 8;
const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
struct Node {
    /// Range into `order`.
    start: usize,
    end: usize,
    axis: usize,
    split: f64,
    left: usize,
    right: usize,
}

#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds a tree over `points` (flat, row-major, `dim` columns).
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidMeasure(
                "kd-tree needs a nonempty point set with a positive dimension".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate in kd-tree input".into()));
        }
        let n = points.len() / dim;
        let mut tree = Self {
            dim,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        tree.build(0, n);
        Ok(tree)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            axis: 0,
            split: 0.0,
            left: NONE,
            right: NONE,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let d = self.dim;
        let mut axis = 0;
        let mut spread = -1.0;
        for k in 0..d {
            let (lo, hi) = self.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let v = self.points[i * d + k];
                    (lo.min(v), hi.max(v))
                },
            );
            if hi - lo > spread {
                spread = hi - lo;
                axis = k;
            }
        }
        if spread <= 0.0 {
            // All points coincide; keep them in one leaf.
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a * d + axis].total_cmp(&pts[b * d + axis])
        });
        let split = self.points[self.order[mid] * d + axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        let node = &mut self.nodes[id];
        node.axis = axis;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    /// Index and squared distance of the nearest point; ties go to the
    /// lowest index.
    pub fn nearest(&self, q: &[f64]) -> (usize, f64) {
        debug_assert_eq!(q.len(), self.dim);
        let mut best = (NONE, f64::INFINITY);
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, id: usize, q: &[f64], best: &mut (usize, f64)) {
        let node = &self.nodes[id];
        if node.left == NONE {
            for &i in &self.order[node.start..node.end] {
                let d2 = sq_dist(q, self.point(i));
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
            return;
        }
        let diff = q[node.axis] - node.split;
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, best);
        // Equal-distance points across the plane may carry a lower index.
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn brute(points: &[f64], d: usize, q: &[f64]) -> (usize, f64) {
        let mut best = (NONE, f64::INFINITY);
        for i in 0..points.len() / d {
            let d2 = sq_dist(q, &points[i * d..(i + 1) * d]);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = rng_from_seed(8);
        for d in 1..6 {
            let n = rng.random_range(1..300);
            let pts: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tree = KdTree::new(d, pts.clone()).unwrap();
            for _ in 0..200 {
                let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                assert_eq!(tree.nearest(&q), brute(&pts, d, &q));
            }
        }
    }

    #[test]
    fn lattice_ties_go_to_lowest_index() {
        let mut rng = rng_from_seed(9);
        let d = 2;
        let n = 200;
        let pts: Vec<f64> = (0..n * d).map(|_| rng.random_range(0..4) as f64).collect();
        let tree = KdTree::new(d, pts.clone()).unwrap();
        for _ in 0..500 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(0..9) as f64 * 0.5).collect();
            assert_eq!(tree.nearest(&q), brute(&pts, d, &q));
        }
    }

    #[test]
    fn rejects_empty_input() {
        assert!(KdTree::new(2, vec![]).is_err());
        assert!(KdTree::new(2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
