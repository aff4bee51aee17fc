//! Exact discrete 1-Wasserstein distance.
//!
//! The transportation problem between two weighted point sets is solved with a
//! primal network simplex on the complete bipartite graph (block-search
//! pricing, strongly feasible spanning trees, artificial-root start). Arcs are
//! implicit: an arc index `e` encodes the pair `(e / m, e % m)`, and arc costs
//! are either cached in a dense matrix or recomputed on demand for large
//! instances. Node potentials at termination give Kantorovich dual potentials.

use serde::Serialize;

use crate::error::{arg, Error, Result};
use crate::measures::{euclidean, DiscreteMeasure, PointCloud};

/// Largest instance (in arcs) whose cost matrix is cached.
pub const DENSE_COST_LIMIT: usize = 4_000_000;

pub const MARGINAL_TOL: f64 = 1e-9;
pub const PRIMAL_REL_TOL: f64 = 1e-9;
pub const DUAL_FEAS_TOL: f64 = 1e-9;
pub const DUALITY_GAP_REL_TOL: f64 = 1e-7;
pub const SLACKNESS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportSolution {
    pub cost: f64,
    /// Non-zero entries of an optimal basic plan, sorted by `(i, j)`.
    pub coupling: Vec<CouplingEntry>,
    pub dual_f: Vec<f64>,
    pub dual_g: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Pivot cap; `None` picks `1000·(n+m) + 100_000`.
    pub max_pivots: Option<usize>,
    pub dense_cost_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_pivots: None,
            dense_cost_limit: DENSE_COST_LIMIT,
        }
    }
}

trait ArcCost {
    fn cost(&self, e: usize, i: usize, j: usize) -> f64;
}

struct DenseCost(Vec<f64>);

impl ArcCost for DenseCost {
    #[inline(always)]
    fn cost(&self, e: usize, _i: usize, _j: usize) -> f64 {
        self.0[e]
    }
}

struct PointCost<'a> {
    a: &'a [f64],
    b: &'a [f64],
    dim: usize,
}

impl ArcCost for PointCost<'_> {
    #[inline(always)]
    fn cost(&self, _e: usize, i: usize, j: usize) -> f64 {
        let d = self.dim;
        let (x, y) = (&self.a[i * d..i * d + d], &self.b[j * d..j * d + d]);
        let mut s = 0.0;
        for k in 0..d {
            let t = x[k] - y[k];
            s += t * t;
        }
        s.sqrt()
    }
}

const NONE: usize = usize::MAX;
const UP: i8 = 1;
const DOWN: i8 = -1;
const LOWER: i8 = 1;
const TREE: i8 = 0;

struct Simplex<'c, C: ArcCost> {
    n: usize,
    m: usize,
    costs: &'c C,
    state: Vec<i8>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_flow: Vec<f64>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<f64>,
    dirty_revs: Vec<usize>,
    block: usize,
    next_arc: usize,
    rc_tol: f64,
    // current pivot
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl<'c, C: ArcCost> Simplex<'c, C> {
    fn new(supply_a: &[f64], supply_b: &[f64], costs: &'c C, max_cost: f64) -> Self {
        let (n, m) = (supply_a.len(), supply_b.len());
        let nodes = n + m;
        let root = nodes;
        let art_cost = (max_cost + 1.0) * nodes as f64;
        let mut s = Self {
            n,
            m,
            costs,
            state: vec![LOWER; n * m],
            parent: vec![root; nodes + 1],
            pred: vec![NONE; nodes + 1],
            pred_flow: vec![0.0; nodes + 1],
            pred_dir: vec![UP; nodes + 1],
            thread: vec![0; nodes + 1],
            rev_thread: vec![0; nodes + 1],
            succ_num: vec![1; nodes + 1],
            last_succ: vec![0; nodes + 1],
            pi: vec![0.0; nodes + 1],
            dirty_revs: Vec::new(),
            block: ((n * m) as f64).sqrt().ceil().max(10.0) as usize,
            next_arc: 0,
            rc_tol: 64.0 * f64::EPSILON * art_cost,
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
        };
        for u in 0..nodes {
            s.pred[u] = n * m + u;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.last_succ[u] = u;
            let supply = if u < n { supply_a[u] } else { -supply_b[u - n] };
            if supply >= 0.0 {
                s.pred_dir[u] = UP;
                s.pi[u] = 0.0;
                s.pred_flow[u] = supply;
            } else {
                s.pred_dir[u] = DOWN;
                s.pi[u] = art_cost;
                s.pred_flow[u] = -supply;
            }
        }
        s.parent[root] = NONE;
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = nodes + 1;
        s.last_succ[root] = root - 1;
        s
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        e / self.m
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        self.n + e % self.m
    }

    /// Block search: scan arcs cyclically, stop at the end of the first block
    /// containing an eligible arc and take the most negative reduced cost in it.
    fn find_entering_arc(&mut self) -> bool {
        let (n, m) = (self.n, self.m);
        let total = n * m;
        let mut e = self.next_arc;
        let (mut i, mut j) = (e / m, e % m);
        let mut best = NONE;
        let mut min = -self.rc_tol;
        let mut cnt = self.block;
        for _ in 0..total {
            if self.state[e] == LOWER {
                let c = self.costs.cost(e, i, j) + self.pi[i] - self.pi[n + j];
                if c < min {
                    min = c;
                    best = e;
                }
            }
            e += 1;
            j += 1;
            if j == m {
                j = 0;
                i += 1;
                if i == n {
                    i = 0;
                    e = 0;
                }
            }
            cnt -= 1;
            if cnt == 0 {
                if best != NONE {
                    break;
                }
                cnt = self.block;
            }
        }
        if best == NONE {
            return false;
        }
        self.next_arc = e;
        self.in_arc = best;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Ratio test along the cycle closed by the entering arc; `<` on the first
    /// path and `<=` on the second keep the tree strongly feasible.
    fn find_leaving_arc(&mut self) -> bool {
        // entering arcs are always at their lower bound
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == UP && self.pred_flow[u] < delta {
                delta = self.pred_flow[u];
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DOWN && self.pred_flow[u] <= delta {
                delta = self.pred_flow[u];
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if result == 0 {
            return false;
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        true
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            let mut u = self.source(self.in_arc);
            while u != self.join {
                self.pred_flow[u] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                self.pred_flow[u] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        // the leaving arc is exactly empty
        self.pred_flow[self.u_out] = 0.0;
        self.state[self.in_arc] = TREE;
        let out_arc = self.pred[self.u_out];
        if out_arc < self.n * self.m {
            self.state[out_arc] = LOWER;
        }
    }

    fn update_tree_structure(&mut self) {
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let in_arc = self.in_arc;
        let in_flow = self.delta;
        let in_dir = if u_in == self.source(in_arc) { UP } else { DOWN };

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            self.pred_flow[u_in] = in_flow;

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // re-hang the stem between u_in and u_out
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            // shift pred data down the reversed stem
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_flow[u] = self.pred_flow[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_flow[u_in] = in_flow;
            self.pred_dir[u_in] = in_dir;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let e = self.in_arc;
        let c = self.costs.cost(e, e / self.m, e % self.m);
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - self.pred_dir[self.u_in] as f64 * c;
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self, max_pivots: usize) -> Result<usize> {
        let mut pivots = 0;
        while self.find_entering_arc() {
            if pivots >= max_pivots {
                return Err(Error::Solver {
                    pivots,
                    reason: "pivot cap reached before optimality".into(),
                });
            }
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::Solver {
                    pivots,
                    reason: "unbounded cycle found".into(),
                });
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
        }
        Ok(pivots)
    }
}

fn check_inputs(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return arg(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        ));
    }
    Ok(())
}

/// Exact W1 with default options.
pub fn solve_transport(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportSolution> {
    solve_transport_with(mu, nu, &SolverOptions::default())
}

pub fn solve_transport_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    opts: &SolverOptions,
) -> Result<TransportSolution> {
    check_inputs(mu, nu)?;
    let (n, m) = (mu.len(), nu.len());
    let points = PointCost {
        a: mu.points().as_slice(),
        b: nu.points().as_slice(),
        dim: mu.dim(),
    };
    let max_pivots = opts.max_pivots.unwrap_or(1000 * (n + m) + 100_000);
    if n * m <= opts.dense_cost_limit {
        let mut c = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                c.push(points.cost(0, i, j));
            }
        }
        let dense = DenseCost(c);
        solve_with_costs(mu, nu, &dense, max_pivots)
    } else {
        solve_with_costs(mu, nu, &points, max_pivots)
    }
}

fn solve_with_costs<C: ArcCost>(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &C,
    max_pivots: usize,
) -> Result<TransportSolution> {
    let (n, m) = (mu.len(), nu.len());
    let mut max_cost = 0.0_f64;
    for i in 0..n {
        for j in 0..m {
            max_cost = max_cost.max(costs.cost(i * m + j, i, j));
        }
    }
    let mut sx = Simplex::new(mu.weights(), nu.weights(), costs, max_cost);
    let pivots = sx.run(max_pivots)?;

    let mut coupling = Vec::with_capacity(n + m);
    let mut residual = 0.0_f64;
    for u in 0..n + m {
        let e = sx.pred[u];
        let f = sx.pred_flow[u];
        if e < n * m {
            if f > 0.0 {
                coupling.push(CouplingEntry {
                    i: e / m,
                    j: e % m,
                    mass: f,
                });
            }
        } else {
            residual = residual.max(f.abs());
        }
    }
    if residual > MARGINAL_TOL {
        return Err(Error::Solver {
            pivots,
            reason: format!("artificial arcs still carry mass {residual:e}"),
        });
    }
    coupling.sort_by_key(|c| (c.i, c.j));
    let cost = coupling
        .iter()
        .map(|c| c.mass * costs.cost(c.i * m + c.j, c.i, c.j))
        .sum();

    // Node potentials give f_i + g_j <= c_ij with f = -π_source, g = π_sink.
    let shift = -sx.pi[0];
    let dual_f = (0..n).map(|i| -sx.pi[i] - shift).collect();
    let dual_g = (0..m).map(|j| sx.pi[n + j] + shift).collect();
    Ok(TransportSolution {
        cost,
        coupling,
        dual_f,
        dual_g,
        iterations: pivots,
    })
}

/// W1 between one-dimensional measures as `∫|F_μ − F_ν|`.
pub fn w1_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return arg("w1_1d needs one-dimensional measures");
    }
    // (position, signed mass) events; the CDF gap is piecewise constant between them
    let mut events: Vec<(f64, f64)> = mu
        .points()
        .as_slice()
        .iter()
        .zip(mu.weights())
        .map(|(&x, &w)| (x, w))
        .chain(
            nu.points()
                .as_slice()
                .iter()
                .zip(nu.weights())
                .map(|(&y, &w)| (y, -w)),
        )
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gap = 0.0;
    let mut total = 0.0;
    for k in 0..events.len() {
        gap += events[k].1;
        if let Some(next) = events.get(k + 1) {
            total += gap.abs() * (next.0 - events[k].0);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub pass: bool,
    pub marginal_error: f64,
    pub min_mass: f64,
    pub primal_rel_error: f64,
    pub worst_dual_violation: f64,
    pub duality_gap_rel: f64,
    pub worst_slackness: f64,
    pub failures: Vec<String>,
}

/// Audits a solution's optimality certificate against its instance.
pub fn check_duality(
    sol: &TransportSolution,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> DualityReport {
    let mut failures = Vec::new();
    let (n, m) = (mu.len(), nu.len());
    let (a, b) = (mu.points(), nu.points());
    if sol.dual_f.len() != n || sol.dual_g.len() != m || mu.dim() != nu.dim() {
        return DualityReport {
            pass: false,
            marginal_error: f64::INFINITY,
            min_mass: 0.0,
            primal_rel_error: f64::INFINITY,
            worst_dual_violation: f64::INFINITY,
            duality_gap_rel: f64::INFINITY,
            worst_slackness: f64::INFINITY,
            failures: vec!["solution shape does not match the instance".into()],
        };
    }

    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; m];
    let mut min_mass = f64::INFINITY;
    let mut primal = 0.0;
    let mut worst_slack = 0.0_f64;
    for c in &sol.coupling {
        if c.i >= n || c.j >= m {
            failures.push(format!("coupling entry ({}, {}) out of range", c.i, c.j));
            continue;
        }
        rows[c.i] += c.mass;
        cols[c.j] += c.mass;
        min_mass = min_mass.min(c.mass);
        let cij = euclidean(a.point(c.i), b.point(c.j));
        primal += c.mass * cij;
        if c.mass > 0.0 {
            worst_slack = worst_slack.max((sol.dual_f[c.i] + sol.dual_g[c.j] - cij).abs());
        }
    }
    if sol.coupling.is_empty() {
        min_mass = 0.0;
    }
    let marginal_error = rows
        .iter()
        .zip(mu.weights())
        .chain(cols.iter().zip(nu.weights()))
        .map(|(x, w)| (x - w).abs())
        .fold(0.0, f64::max);
    if min_mass < 0.0 {
        failures.push(format!("negative coupling mass {min_mass}"));
    }
    if marginal_error > MARGINAL_TOL {
        failures.push(format!("marginal error {marginal_error:e}"));
    }
    let primal_rel_error = (primal - sol.cost).abs() / sol.cost.abs().max(1.0);
    if primal_rel_error > PRIMAL_REL_TOL {
        failures.push(format!("primal cost mismatch {primal_rel_error:e}"));
    }

    let mut worst_dual = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..m {
            let v = sol.dual_f[i] + sol.dual_g[j] - euclidean(a.point(i), b.point(j));
            worst_dual = worst_dual.max(v);
        }
    }
    if worst_dual > DUAL_FEAS_TOL {
        failures.push(format!("dual infeasibility {worst_dual:e}"));
    }
    let dual: f64 = sol
        .dual_f
        .iter()
        .zip(mu.weights())
        .map(|(f, w)| f * w)
        .sum::<f64>()
        + sol
            .dual_g
            .iter()
            .zip(nu.weights())
            .map(|(g, w)| g * w)
            .sum::<f64>();
    let duality_gap_rel = (dual - sol.cost).abs() / sol.cost.abs().max(1.0);
    if duality_gap_rel > DUALITY_GAP_REL_TOL {
        failures.push(format!("duality gap {duality_gap_rel:e}"));
    }
    if worst_slack > SLACKNESS_TOL {
        failures.push(format!("complementary slackness violated by {worst_slack:e}"));
    }

    DualityReport {
        pass: failures.is_empty(),
        marginal_error,
        min_mass,
        primal_rel_error,
        worst_dual_violation: worst_dual,
        duality_gap_rel,
        worst_slackness: worst_slack,
        failures,
    }
}

/// `Σ mass·‖a_i − b_j‖` for a plan between two uniform clouds.
pub fn coupling_cost(plan: &[CouplingEntry], a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return arg("point clouds differ in dimension");
    }
    let (n, m) = (a.len(), b.len());
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; m];
    let mut total = 0.0;
    for c in plan {
        if c.i >= n || c.j >= m {
            return arg(format!("plan entry ({}, {}) out of range", c.i, c.j));
        }
        if c.mass < 0.0 {
            return arg("plan has negative mass");
        }
        rows[c.i] += c.mass;
        cols[c.j] += c.mass;
        total += c.mass * euclidean(a.point(c.i), b.point(c.j));
    }
    let (wa, wb) = (1.0 / n as f64, 1.0 / m as f64);
    let worst = rows
        .iter()
        .map(|r| (r - wa).abs())
        .chain(cols.iter().map(|c| (c - wb).abs()))
        .fold(0.0, f64::max);
    if worst > MARGINAL_TOL {
        return arg(format!("plan marginals deviate from uniform by {worst:e}"));
    }
    Ok(total)
}
