//! Primal network simplex on a dense bipartite transportation network.
//!
//! Sources `0..n` ship integer supplies to sinks `n..n+m` over all `n*m`
//! arcs. The spanning tree is rooted at the first source of the initial
//! ordering, starts from a northwest-corner basis, and is kept strongly
//! feasible (every zero-flow tree arc points towards the root), which rules
//! out cycling on degenerate pivots. Entering arcs are chosen by block search.

use std::time::Instant;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Limits on a single solve.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolverOptions {
    /// Wall-clock deadline; exceeding it aborts with [`Error::Timeout`].
    pub deadline: Option<Instant>,
    /// Pivot budget; exceeding it aborts with [`Error::Timeout`].
    pub max_pivots: Option<u64>,
}

pub(crate) struct FlowSolution {
    /// `(source, sink, flow)` for every tree arc with positive flow.
    pub flows: Vec<(usize, usize, i64)>,
    pub pot_source: Vec<f64>,
    pub pot_sink: Vec<f64>,
    pub pivots: u64,
}

struct Simplex<'a> {
    n: usize,
    m: usize,
    cost: &'a [f64],
    parent: Vec<usize>,
    /// Arc `i*m + j` joining a node to its parent.
    pred: Vec<usize>,
    /// Flow on the `pred` arc.
    flow: Vec<i64>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
    // block search state
    block: usize,
    next_row: usize,
    next_col: usize,
    eps: f64,
    stack: Vec<usize>,
    stem: Vec<usize>,
}

impl<'a> Simplex<'a> {
    #[inline]
    fn is_source(&self, u: usize) -> bool {
        u < self.n
    }

    fn attach(&mut self, child: usize, parent: usize) {
        self.parent[child] = parent;
        let head = self.first_child[parent];
        self.next_sib[child] = head;
        self.prev_sib[child] = NONE;
        if head != NONE {
            self.prev_sib[head] = child;
        }
        self.first_child[parent] = child;
    }

    fn detach(&mut self, child: usize) {
        let p = self.parent[child];
        let (prev, next) = (self.prev_sib[child], self.next_sib[child]);
        if prev != NONE {
            self.next_sib[prev] = next;
        } else {
            self.first_child[p] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.next_sib[child] = NONE;
        self.prev_sib[child] = NONE;
    }

    /// Northwest-corner basis along the given orderings. On ties the row
    /// advances, which makes each degenerate arc point towards the root.
    fn init(&mut self, supply: &[i64], demand: &[i64], rows: &[usize], cols: &[usize]) {
        let n = self.n;
        let root = rows[0];
        self.parent[root] = NONE;
        self.depth[root] = 0;
        self.pot[root] = 0.0;
        let (mut ii, mut jj) = (0usize, 0usize);
        let mut ra = supply[rows[0]];
        let mut rb = demand[cols[0]];
        let mut node = n + cols[0];
        let mut par = root;
        loop {
            let x = ra.min(rb);
            let arc = rows[ii] * self.m + cols[jj];
            self.attach(node, par);
            self.pred[node] = arc;
            self.flow[node] = x;
            self.depth[node] = self.depth[par] + 1;
            self.pot[node] = self.cost[arc] - self.pot[par];
            ra -= x;
            rb -= x;
            if ii + 1 == rows.len() && jj + 1 == cols.len() {
                break;
            }
            if ra == 0 && ii + 1 < rows.len() {
                ii += 1;
                ra = supply[rows[ii]];
                node = rows[ii];
                par = n + cols[jj];
            } else {
                jj += 1;
                rb = demand[cols[jj]];
                node = n + cols[jj];
                par = rows[ii];
            }
        }
    }

    /// Block search for an arc with sufficiently negative reduced cost.
    fn find_entering(&mut self) -> Option<usize> {
        let (n, m) = (self.n, self.m);
        let total = n * m;
        let mut best = NONE;
        let mut best_rc = -self.eps;
        let mut left = self.block;
        let (mut i, mut j) = (self.next_row, self.next_col);
        let mut scanned = 0usize;
        while scanned < total {
            let row = &self.cost[i * m..(i + 1) * m];
            let pi = self.pot[i];
            let sinks = &self.pot[n..];
            let span = (m - j).min(left).min(total - scanned);
            for jj in j..j + span {
                let rc = row[jj] - pi - sinks[jj];
                if rc < best_rc {
                    best_rc = rc;
                    best = i * m + jj;
                }
            }
            scanned += span;
            left -= span;
            j += span;
            if j == m {
                j = 0;
                i += 1;
                if i == n {
                    i = 0;
                }
            }
            if left == 0 {
                if best != NONE {
                    break;
                }
                left = self.block;
            }
        }
        self.next_row = i;
        self.next_col = j;
        (best != NONE).then_some(best)
    }

    fn pivot(&mut self, arc: usize) {
        let n = self.n;
        let first = arc / self.m;
        let second = n + arc % self.m;

        let (mut u, mut v) = (first, second);
        while u != v {
            if self.depth[u] > self.depth[v] {
                u = self.parent[u];
            } else if self.depth[v] > self.depth[u] {
                v = self.parent[v];
            } else {
                u = self.parent[u];
                v = self.parent[v];
            }
        }
        let join = u;

        // Flow runs first -> second along the entering arc, up from second to
        // the join and down from the join to first. The leaving arc is the last
        // blocking arc in that orientation starting from the join.
        let mut delta = i64::MAX;
        let mut u_out = NONE;
        let mut on_second = false;
        let mut u = first;
        while u != join {
            if self.is_source(u) && self.flow[u] < delta {
                delta = self.flow[u];
                u_out = u;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.is_source(u) && self.flow[u] <= delta {
                delta = self.flow[u];
                u_out = u;
                on_second = true;
            }
            u = self.parent[u];
        }
        debug_assert!(u_out != NONE);

        if delta > 0 {
            let mut u = first;
            while u != join {
                if self.is_source(u) {
                    self.flow[u] -= delta;
                } else {
                    self.flow[u] += delta;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                if self.is_source(u) {
                    self.flow[u] += delta;
                } else {
                    self.flow[u] -= delta;
                }
                u = self.parent[u];
            }
        }

        let (u_in, v_in) = if on_second {
            (second, first)
        } else {
            (first, second)
        };

        // Re-hang the subtree of u_out from u_in, reversing the stem.
        self.stem.clear();
        let mut s = u_in;
        self.stem.push(s);
        while s != u_out {
            s = self.parent[s];
            self.stem.push(s);
        }
        let k = self.stem.len() - 1;
        self.detach(u_out);
        for t in 0..k {
            let child = self.stem[t];
            self.detach(child);
        }
        for t in (0..k).rev() {
            let (lo, hi) = (self.stem[t], self.stem[t + 1]);
            self.pred[hi] = self.pred[lo];
            self.flow[hi] = self.flow[lo];
        }
        for t in 0..k {
            let (lo, hi) = (self.stem[t], self.stem[t + 1]);
            self.attach(hi, lo);
        }
        self.attach(u_in, v_in);
        self.pred[u_in] = arc;
        self.flow[u_in] = delta;

        // Depths and potentials of the moved subtree, recomputed from parents.
        self.stack.clear();
        self.stack.push(u_in);
        while let Some(w) = self.stack.pop() {
            let p = self.parent[w];
            self.depth[w] = self.depth[p] + 1;
            self.pot[w] = self.cost[self.pred[w]] - self.pot[p];
            let mut c = self.first_child[w];
            while c != NONE {
                self.stack.push(c);
                c = self.next_sib[c];
            }
        }
    }
}

/// Solves the transportation problem with integer `supply`/`demand` of equal
/// totals and strictly positive entries. `rows`/`cols` order the atoms for
/// the northwest-corner start.
pub(crate) fn solve(
    cost: &[f64],
    supply: &[i64],
    demand: &[i64],
    rows: &[usize],
    cols: &[usize],
    opts: &SolverOptions,
) -> Result<FlowSolution> {
    let n = supply.len();
    let m = demand.len();
    debug_assert_eq!(cost.len(), n * m);
    debug_assert_eq!(supply.iter().sum::<i64>(), demand.iter().sum::<i64>());
    let nodes = n + m;
    let max_cost = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let mut sx = Simplex {
        n,
        m,
        cost,
        parent: vec![NONE; nodes],
        pred: vec![NONE; nodes],
        flow: vec![0; nodes],
        depth: vec![0; nodes],
        pot: vec![0.0; nodes],
        first_child: vec![NONE; nodes],
        next_sib: vec![NONE; nodes],
        prev_sib: vec![NONE; nodes],
        block: ((n * m) as f64).sqrt().ceil().max(10.0) as usize,
        next_row: 0,
        next_col: 0,
        eps: 1e-12 * (1.0 + max_cost),
        stack: Vec::new(),
        stem: Vec::new(),
    };
    sx.init(supply, demand, rows, cols);

    let mut pivots = 0u64;
    while let Some(arc) = sx.find_entering() {
        sx.pivot(arc);
        pivots += 1;
        if opts.max_pivots.is_some_and(|cap| pivots > cap) {
            return Err(Error::Timeout { pivots });
        }
        if pivots % 256 == 0 && opts.deadline.is_some_and(|d| Instant::now() > d) {
            return Err(Error::Timeout { pivots });
        }
    }

    let mut flows = Vec::with_capacity(nodes);
    for u in 0..nodes {
        if sx.pred[u] != NONE && sx.flow[u] > 0 {
            let a = sx.pred[u];
            flows.push((a / m, a % m, sx.flow[u]));
        }
    }
    flows.sort_unstable();
    let pot_sink = sx.pot.split_off(n);
    Ok(FlowSolution {
        flows,
        pot_source: sx.pot,
        pot_sink,
        pivots,
    })
}
