//! Entropy-regularized transport, solved with log-domain Sinkhorn iterations.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{arg, Error, Result};
use crate::measures::{euclidean, DiscreteMeasure};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

const POLISH_AFTER: usize = 200;
const NEWTON_MAX_DIM: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropicSolution {
    /// Transport cost plus `epsilon` times the KL divergence to the product coupling.
    pub value: f64,
    /// Row-major `n × m` plan.
    pub coupling: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

impl EntropicSolution {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.cols + j]
    }

    /// Plain transport cost of the plan, without the entropy term.
    pub fn transport_cost(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        let mut total = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let p = self.entry(i, j);
                if p > 0.0 {
                    total += p * euclidean(mu.points().point(i), nu.points().point(j));
                }
            }
        }
        total
    }
}

/// Median of the pairwise Euclidean costs between the supports.
pub fn median_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let mut costs: Vec<f64> = mu
        .points()
        .iter()
        .flat_map(|a| nu.points().iter().map(move |b| euclidean(a, b)))
        .collect();
    costs.sort_by(f64::total_cmp);
    let k = costs.len();
    if k % 2 == 1 {
        costs[k / 2]
    } else {
        0.5 * (costs[k / 2 - 1] + costs[k / 2])
    }
}

/// `Σ π_ij log(π_ij / (w_i v_j))` for a row-major plan. Mass placed where the
/// product measure vanishes gives `+∞`.
pub fn kl_divergence(pi: &[f64], mu_w: &[f64], nu_w: &[f64]) -> Result<f64> {
    let (n, m) = (mu_w.len(), nu_w.len());
    if pi.len() != n * m {
        return arg(format!("plan has {} entries, expected {n}x{m}", pi.len()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = pi[i * m + j];
            if p < 0.0 || !p.is_finite() {
                return arg(format!("plan entry ({i}, {j}) = {p} is not a valid mass"));
            }
            if p == 0.0 {
                continue;
            }
            let q = mu_w[i] * nu_w[j];
            if q == 0.0 {
                return Ok(f64::INFINITY);
            }
            total += p * (p / q).ln();
        }
    }
    Ok(total.max(0.0))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

struct LogSinkhorn<'a> {
    cost: &'a [f64],
    log_a: &'a [f64],
    log_b: &'a [f64],
    f: Vec<f64>,
    g: Vec<f64>,
}

impl LogSinkhorn<'_> {
    fn n(&self) -> usize {
        self.log_a.len()
    }

    fn m(&self) -> usize {
        self.log_b.len()
    }

    fn update_f(&mut self, eps: f64) {
        let m = self.m();
        for i in 0..self.n() {
            let row = &self.cost[i * m..(i + 1) * m];
            let lse = log_sum_exp((0..m).map(|j| self.log_b[j] + (self.g[j] - row[j]) / eps));
            self.f[i] = -eps * lse;
        }
    }

    fn update_g(&mut self, eps: f64) {
        let (n, m) = (self.n(), self.m());
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| self.log_a[i] + (self.f[i] - self.cost[i * m + j]) / eps));
            self.g[j] = -eps * lse;
        }
    }

    fn log_plan(&self, i: usize, j: usize, eps: f64) -> f64 {
        self.log_a[i] + self.log_b[j] + (self.f[i] + self.g[j] - self.cost[i * self.m() + j]) / eps
    }

    /// L1 error of the row marginal; columns are exact right after a g-update.
    fn row_error(&self, eps: f64) -> f64 {
        (0..self.n())
            .map(|i| {
                let s: f64 = (0..self.m()).map(|j| self.log_plan(i, j, eps).exp()).sum();
                (s - self.log_a[i].exp()).abs()
            })
            .sum()
    }

    /// Newton ascent on the semi-dual in `g` (with `f` the exact row update),
    /// with `g[0]` pinned to remove the constant null direction. Returns the
    /// column error it reached; stops early when a step no longer helps.
    fn newton_polish(&mut self, eps: f64, tol: f64, budget: usize, used: &mut usize) -> f64 {
        let (n, m) = (self.n(), self.m());
        self.update_f(eps);
        let mut err = self.col_error(eps);
        if m < 2 {
            return err;
        }
        while err > tol && *used < budget {
            let mut plan = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    plan[i * m + j] = self.log_plan(i, j, eps).exp();
                }
            }
            let cols: Vec<f64> = (0..m).map(|j| (0..n).map(|i| plan[i * m + j]).sum()).collect();
            let k = m - 1;
            let mut h = DMatrix::<f64>::zeros(k, k);
            for i in 0..n {
                let row = &plan[i * m..(i + 1) * m];
                let inv_a = (-self.log_a[i]).exp();
                for p in 1..m {
                    let rp = row[p] * inv_a;
                    if rp == 0.0 {
                        continue;
                    }
                    for q in 1..m {
                        h[(p - 1, q - 1)] -= rp * row[q];
                    }
                }
            }
            for p in 1..m {
                h[(p - 1, p - 1)] += cols[p];
            }
            h /= eps;
            let grad = DVector::from_iterator(k, (1..m).map(|j| self.log_b[j].exp() - cols[j]));
            let scale = (0..k).map(|p| h[(p, p)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let mut step = None;
            for reg in [1e-14, 1e-11, 1e-8, 1e-5] {
                let mut hr = h.clone();
                for p in 0..k {
                    hr[(p, p)] += reg * scale;
                }
                if let Some(ch) = hr.cholesky() {
                    step = Some(ch.solve(&grad));
                    break;
                }
            }
            let Some(dir) = step else { return err };
            *used += 1;
            let g0 = self.g.clone();
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                for j in 1..m {
                    self.g[j] = g0[j] + t * dir[j - 1];
                }
                self.update_f(eps);
                let e = self.col_error(eps);
                if e.is_finite() && e < err {
                    err = e;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                self.g = g0;
                self.update_f(eps);
                return err;
            }
        }
        err
    }

    fn col_error(&self, eps: f64) -> f64 {
        (0..self.m())
            .map(|j| {
                let s: f64 = (0..self.n()).map(|i| self.log_plan(i, j, eps).exp()).sum();
                (s - self.log_b[j].exp()).abs()
            })
            .sum()
    }
}

/// Log-domain Sinkhorn with ε-scaling warm starts. `max_iter` bounds the total
/// number of (f, g) sweeps across all stages.
///
/// Plain sweeps contract very slowly once ε is small relative to the cost
/// spread, so every `POLISH_AFTER` sweeps without convergence the iterate is
/// handed to a few Newton steps on the same dual objective. They share the
/// fixed point and converge quadratically from there. Newton steps count
/// toward `max_iter`.
pub fn sinkhorn_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<EntropicSolution> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return arg(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    if !(tol > 0.0) {
        return arg(format!("tolerance must be positive, got {tol}"));
    }
    if mu.dim() != nu.dim() {
        return arg(format!("dimension mismatch: {} vs {}", mu.dim(), nu.dim()));
    }
    // Work on the supports only so every log-weight is finite.
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
    let log_a: Vec<f64> = rows.iter().map(|&i| mu.weights()[i].ln()).collect();
    let log_b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j].ln()).collect();
    let (n, m) = (rows.len(), cols.len());
    let mut cost = Vec::with_capacity(n * m);
    for &i in &rows {
        for &j in &cols {
            cost.push(euclidean(mu.points().point(i), nu.points().point(j)));
        }
    }
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);

    let mut solver = LogSinkhorn {
        cost: &cost,
        log_a: &log_a,
        log_b: &log_b,
        f: vec![0.0; n],
        g: vec![0.0; m],
    };

    let mut stages = Vec::new();
    let mut e = max_cost;
    while e > epsilon {
        stages.push(e);
        e /= 4.0;
    }
    stages.push(epsilon);

    let mut iterations = 0;
    let mut err = f64::INFINITY;
    for (k, &eps) in stages.iter().enumerate() {
        let last = k + 1 == stages.len();
        let stage_tol = if last { tol } else { tol.max(1e-3) };
        let mut since_polish = 0;
        loop {
            if iterations >= max_iter {
                return Err(Error::Convergence {
                    iterations,
                    marginal_error: err,
                });
            }
            solver.update_f(eps);
            solver.update_g(eps);
            iterations += 1;
            since_polish += 1;
            err = solver.row_error(eps);
            if !err.is_finite() {
                return Err(Error::Convergence {
                    iterations,
                    marginal_error: err,
                });
            }
            if err <= stage_tol {
                break;
            }
            if since_polish >= POLISH_AFTER && m <= NEWTON_MAX_DIM {
                since_polish = 0;
                let e = solver.newton_polish(eps, stage_tol, max_iter, &mut iterations);
                if e <= stage_tol {
                    err = solver.row_error(eps).max(e);
                    break;
                }
                solver.update_g(eps);
            }
        }
    }
    err = err.max(solver.col_error(epsilon)).max(solver.row_error(epsilon));

    let (rn, cm) = (mu.len(), nu.len());
    let mut coupling = vec![0.0; rn * cm];
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            coupling[i * cm + j] = solver.log_plan(a, b, epsilon).exp();
        }
    }
    let mut sol = EntropicSolution {
        value: 0.0,
        coupling,
        rows: rn,
        cols: cm,
        epsilon,
        iterations,
        marginal_error: err,
    };
    let kl = kl_divergence(&sol.coupling, mu.weights(), nu.weights())?;
    sol.value = sol.transport_cost(mu, nu) + epsilon * kl;
    Ok(sol)
}
