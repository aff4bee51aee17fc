//! Batch drivers: convergence sweeps, σ-sweeps, statistical checks of the
//! metric and stability properties, and log-log rate fitting.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{arg, config, Error, Result};
use crate::got_estimator::{
    bias_allowance, calibrate_bias_constant, estimate_got, estimate_got_mirrored,
    estimate_one_sample, mean_and_std_err, pooled_std_err, Estimate, MeasureInput,
};
use crate::measures::{DiscreteMeasure, PointCloud, SourceSpec};
use crate::noise::{NoiseFamily, NoiseModel};
use crate::ot_exact::solve_transport;
use crate::rng::{Role, SeedTuple};
use crate::sinkhorn::{median_cost, sinkhorn_solve};
use crate::theory_bounds::{concentration_bound, concentration_threshold, stability_bound};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CSV_HEADER: [&str; 7] = ["d", "sigma", "n", "m", "trial", "estimate", "elapsed_ms"];

/// How the Monte Carlo size `m` follows the sample size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MRule {
    #[default]
    EqualN,
    Fixed(usize),
    /// `max(n, k)`.
    AtLeast(usize),
}

impl MRule {
    pub fn m_for(self, n: usize) -> usize {
        match self {
            MRule::EqualN => n,
            MRule::Fixed(m) => m,
            MRule::AtLeast(k) => n.max(k),
        }
    }
}

/// `k` geometrically spaced integers from `lo` to `hi`, rounded.
pub fn geometric_grid(lo: usize, hi: usize, k: usize) -> Vec<usize> {
    if k < 2 || hi <= lo {
        return vec![lo];
    }
    let ratio = (hi as f64 / lo as f64).powf(1.0 / (k - 1) as f64);
    let mut out: Vec<usize> = (0..k).map(|i| (lo as f64 * ratio.powi(i as i32)).round() as usize).collect();
    out.dedup();
    out
}

fn default_n_grid() -> Vec<usize> {
    geometric_grid(10, 3000, 8)
}

fn default_trials() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub source: SourceSpec,
    #[serde(default)]
    pub noise: NoiseFamily,
    pub sigma_grid: Vec<f64>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub m_rule: MRule,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub crn: bool,
}

fn strictly_increasing<T: PartialOrd>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

fn validate_sigmas(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return config("sigma_grid must not be empty");
    }
    if grid.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return config("sigma_grid values must be finite and non-negative");
    }
    if !strictly_increasing(grid) {
        return config("sigma_grid must be strictly increasing");
    }
    Ok(())
}

/// SHA-256 of the canonical JSON form of a serializable config.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("configs serialize to JSON");
    hex::encode(Sha256::digest(&bytes))
}

impl SweepConfig {
    pub fn new(source: SourceSpec, sigma_grid: Vec<f64>) -> Self {
        Self {
            source,
            noise: NoiseFamily::Gaussian,
            sigma_grid,
            n_grid: default_n_grid(),
            m_rule: MRule::EqualN,
            trials: default_trials(),
            seed: 0,
            crn: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        validate_sigmas(&self.sigma_grid)?;
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return config("n_grid must be non-empty with positive entries");
        }
        if !strictly_increasing(&self.n_grid) {
            return config("n_grid must be strictly increasing");
        }
        if self.trials < 2 {
            return config("trials must be at least 2 so that std_err is defined");
        }
        for &n in &self.n_grid {
            if self.m_rule.m_for(n) < n {
                return config(format!("m_rule gives m = {} below n = {n}", self.m_rule.m_for(n)));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResultRow {
    pub d: usize,
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub trial: usize,
    /// NaN for trials of a failed cell.
    pub estimate: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub sigma: f64,
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub seed: u64,
    pub config_hash: String,
    pub artifact_version: String,
    pub failures: Vec<CellFailure>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.d.to_string(),
                r.sigma.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                r.trial.to_string(),
                r.estimate.to_string(),
                r.elapsed_ms.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    /// Parses rows written by [`ResultTable::to_csv`]; metadata is left empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::Argument(format!("unreadable header: {e}")))?;
        for (i, want) in CSV_HEADER.iter().enumerate() {
            match header.get(i) {
                Some(h) if h == *want => {}
                Some(h) => return arg(format!("column {} is `{h}`, expected `{want}`", i + 1)),
                None => return arg(format!("missing column `{want}`")),
            }
        }
        if header.len() != CSV_HEADER.len() {
            return arg(format!("expected {} columns, found {}", CSV_HEADER.len(), header.len()));
        }
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::Argument(format!("row {line}: {e}")))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            fn parse<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T> {
                s.parse().map_err(|_| Error::Argument(format!("row {line}, column `{col}`: cannot parse `{s}`")))
            }
            let row = ResultRow {
                d: parse(field(0), "d", line)?,
                sigma: parse(field(1), "sigma", line)?,
                n: parse(field(2), "n", line)?,
                m: parse(field(3), "m", line)?,
                trial: parse(field(4), "trial", line)?,
                estimate: parse(field(5), "estimate", line)?,
                elapsed_ms: parse(field(6), "elapsed_ms", line)?,
            };
            if row.estimate < 0.0 {
                return arg(format!("row {line}, column `estimate`: negative value {}", row.estimate));
            }
            rows.push(row);
        }
        Ok(Self {
            rows,
            ..Default::default()
        })
    }

    pub fn sigmas(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.rows.iter().map(|r| r.sigma).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }
}

/// Runtime knobs that never affect the numbers produced.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Record wall-clock time per row; otherwise `elapsed_ms` is 0 so outputs
    /// replay bitwise.
    pub timing: bool,
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => arg("jobs must be at least 1"),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

struct Cell {
    sigma: f64,
    n: usize,
    m: usize,
}

fn cell_rows(d: usize, cell: &Cell, trials: usize, result: Result<Estimate>, ms: u64) -> (Vec<ResultRow>, Option<CellFailure>) {
    let (values, failure) = match result {
        Ok(est) => (est.values, None),
        Err(e) => (
            vec![f64::NAN; trials],
            Some(CellFailure {
                sigma: cell.sigma,
                n: cell.n,
                message: e.to_string(),
            }),
        ),
    };
    let per_trial = ms / trials.max(1) as u64;
    let rows = values
        .into_iter()
        .enumerate()
        .map(|(trial, estimate)| ResultRow {
            d,
            sigma: cell.sigma,
            n: cell.n,
            m: cell.m,
            trial,
            estimate,
            elapsed_ms: per_trial,
        })
        .collect();
    (rows, failure)
}

fn assemble(cells: Vec<(Vec<ResultRow>, Option<CellFailure>)>, seed: u64, hash: String) -> ResultTable {
    let mut table = ResultTable {
        seed,
        config_hash: hash,
        artifact_version: ARTIFACT_VERSION.to_string(),
        ..Default::default()
    };
    for (rows, failure) in cells {
        table.rows.extend(rows);
        table.failures.extend(failure);
    }
    table
}

/// Convergence-in-n experiment: one-sample estimates for every `(σ, n)` cell.
/// Cells run concurrently; rows come back ordered by `(σ, n, trial)`.
pub fn run_convergence_sweep(cfg: &SweepConfig, opts: RunOptions) -> Result<ResultTable> {
    cfg.validate()?;
    let d = cfg.source.d;
    let cells: Vec<Cell> = cfg
        .sigma_grid
        .iter()
        .flat_map(|&sigma| {
            cfg.n_grid.iter().map(move |&n| Cell {
                sigma,
                n,
                m: cfg.m_rule.m_for(n),
            })
        })
        .collect();
    let out = with_pool(opts.jobs, || {
        cells
            .par_iter()
            .map(|cell| {
                let start = Instant::now();
                let mut seed = SeedTuple::new(cfg.seed).with(cell.n as u64);
                if !cfg.crn {
                    seed = seed.with(cell.sigma.to_bits());
                }
                let result = NoiseModel::new(cfg.noise, cell.sigma, d)
                    .and_then(|noise| estimate_one_sample(&cfg.source, &noise, cell.n, cell.m, cfg.trials, seed));
                let ms = if opts.timing { start.elapsed().as_millis() as u64 } else { 0 };
                cell_rows(d, cell, cfg.trials, result, ms)
            })
            .collect::<Vec<_>>()
    })?;
    Ok(assemble(out, cfg.seed, cfg.hash()))
}

/// Two-measure σ-sweep of `W1(μ∗G_σ, ν∗G_σ)`. Rows carry `n = m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSweepConfig {
    pub source: SourceSpec,
    /// Second measure; defaults to the other component of a dirac pair, or an
    /// independent copy of `source` otherwise.
    #[serde(default)]
    pub other: Option<SourceSpec>,
    #[serde(default)]
    pub noise: NoiseFamily,
    pub sigma_grid: Vec<f64>,
    pub m: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub crn: bool,
}

impl SigmaSweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        validate_sigmas(&self.sigma_grid)?;
        if let Some(o) = &self.other {
            o.validate()?;
            if o.d != self.source.d {
                return config("source and other must share the dimension");
            }
        }
        if self.m == 0 || self.trials < 2 {
            return config("need m >= 1 and trials >= 2");
        }
        Ok(())
    }

    pub fn other_measure(&self) -> SourceSpec {
        self.other.clone().unwrap_or_else(|| self.source.other_component())
    }
}

pub fn run_sigma_sweep(cfg: &SigmaSweepConfig, opts: RunOptions) -> Result<ResultTable> {
    cfg.validate()?;
    let d = cfg.source.d;
    let mu = MeasureInput::Source(cfg.source.clone());
    let nu = MeasureInput::Source(cfg.other_measure());
    let out = with_pool(opts.jobs, || {
        cfg.sigma_grid
            .par_iter()
            .map(|&sigma| {
                let start = Instant::now();
                let cell = Cell { sigma, n: cfg.m, m: cfg.m };
                let result = NoiseModel::new(cfg.noise, sigma, d)
                    .and_then(|noise| estimate_got(&mu, &nu, &noise, cfg.m, cfg.trials, SeedTuple::new(cfg.seed), cfg.crn));
                let ms = if opts.timing { start.elapsed().as_millis() as u64 } else { 0 };
                cell_rows(d, &cell, cfg.trials, result, ms)
            })
            .collect::<Vec<_>>()
    })?;
    Ok(assemble(out, cfg.seed, config_hash(cfg)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// Per-`(σ, n)` mean and standard error over finite estimates, ordered by `(σ, n)`.
pub fn summarize(table: &ResultTable) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(u64, usize), (usize, Vec<f64>)> = BTreeMap::new();
    for r in &table.rows {
        let e = groups.entry((r.sigma.to_bits(), r.n)).or_insert((r.m, Vec::new()));
        if r.estimate.is_finite() {
            e.1.push(r.estimate);
        }
    }
    let mut out: Vec<CellSummary> = groups
        .into_iter()
        .filter(|(_, (_, v))| !v.is_empty())
        .map(|((s, n), (m, v))| {
            let (mean, std_err) = mean_and_std_err(&v);
            CellSummary {
                sigma: f64::from_bits(s),
                n,
                m,
                mean,
                std_err,
                trials: v.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.sigma.total_cmp(&b.sigma).then(a.n.cmp(&b.n)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub sigma: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `(n, mean)` pairs used in the fit.
    pub points: Vec<(usize, f64)>,
    /// Sample sizes whose mean was not positive and so had no logarithm.
    pub excluded_nonpositive: Vec<usize>,
    /// Smallest n, dropped because the full-grid fit had r² < 0.95.
    pub dropped_smallest: Option<usize>,
}

fn ols(points: &[(usize, f64)]) -> (f64, f64, f64) {
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

/// Least-squares line through `(log n, log mean)` for one σ.
pub fn fit_loglog_slope(table: &ResultTable, sigma: f64) -> Result<SlopeFit> {
    let cells: Vec<CellSummary> = summarize(table).into_iter().filter(|c| c.sigma == sigma).collect();
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for c in &cells {
        if c.mean > 0.0 {
            points.push((c.n, c.mean));
        } else {
            excluded.push(c.n);
        }
    }
    if points.len() < 4 {
        return arg(format!(
            "slope fit at sigma = {sigma} needs at least 4 sample sizes with positive means, found {}",
            points.len()
        ));
    }
    let (mut slope, mut intercept, mut r2) = ols(&points);
    let mut dropped = None;
    if r2 < 0.95 && points.len() > 4 {
        let rest = points[1..].to_vec();
        dropped = Some(points[0].0);
        (slope, intercept, r2) = ols(&rest);
        points = rest;
    }
    Ok(SlopeFit {
        sigma,
        slope,
        intercept,
        r2,
        points,
        excluded_nonpositive: excluded,
        dropped_smallest: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingCheck {
    pub n: usize,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub slack: f64,
    pub ok: bool,
}

/// At each n, checks `mean(σ_hi) ≤ mean(σ_lo) + 3·pooled std_err + allowance`
/// for consecutive σ values.
pub fn check_sigma_ordering(table: &ResultTable, allowance: f64) -> Vec<OrderingCheck> {
    let cells = summarize(table);
    let mut by_n: BTreeMap<usize, Vec<&CellSummary>> = BTreeMap::new();
    for c in &cells {
        by_n.entry(c.n).or_default().push(c);
    }
    let mut out = Vec::new();
    for (n, cs) in by_n {
        for w in cs.windows(2) {
            let slack = 3.0 * w[0].std_err.hypot(w[1].std_err) + allowance;
            out.push(OrderingCheck {
                n,
                sigma_lo: w[0].sigma,
                sigma_hi: w[1].sigma,
                mean_lo: w[0].mean,
                mean_hi: w[1].mean,
                slack,
                ok: w[1].mean <= w[0].mean + slack,
            });
        }
    }
    out
}

/// Random discrete measure with `atoms` points in `[-1, 1]^d` and random weights.
pub fn random_discrete_measure(atoms: usize, d: usize, seed: SeedTuple) -> Result<DiscreteMeasure> {
    let mut rng = seed.rng();
    let pts = PointCloud::new(d, (0..atoms * d).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
    DiscreteMeasure::normalized(pts, w)
}

/// Allowance for comparing estimates of measures in `inputs` at one σ: twice
/// the largest calibrated self-distance.
fn calibrated_allowance(inputs: &[&MeasureInput], noise: &NoiseModel, m: usize, trials: usize, seed: SeedTuple) -> Result<f64> {
    let mut c = 0.0f64;
    for (k, mu) in inputs.iter().enumerate() {
        c = c.max(calibrate_bias_constant(mu, noise, m, trials, seed.with(k as u64))?);
    }
    Ok(bias_allowance(c, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomConfig {
    pub d: usize,
    pub sigma: f64,
    #[serde(default)]
    pub noise: NoiseFamily,
    pub triples: usize,
    pub atoms: usize,
    pub m: usize,
    pub m_small: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangleCheck {
    pub d_xy: f64,
    pub d_yz: f64,
    pub d_xz: f64,
    pub slack: f64,
    pub ok: bool,
}

/// `W(x, z) ≤ W(x, y) + W(y, z)` up to three pooled standard errors plus the
/// calibrated allowance.
pub fn check_triangle(
    x: &MeasureInput,
    y: &MeasureInput,
    z: &MeasureInput,
    noise: &NoiseModel,
    m: usize,
    trials: usize,
    seed: SeedTuple,
) -> Result<TriangleCheck> {
    let xy = estimate_got(x, y, noise, m, trials, seed.with(1), false)?;
    let yz = estimate_got(y, z, noise, m, trials, seed.with(2), false)?;
    let xz = estimate_got(x, z, noise, m, trials, seed.with(3), false)?;
    let allowance = calibrated_allowance(&[x, y, z], noise, m, trials, seed)?;
    let se = (xy.std_err.powi(2) + yz.std_err.powi(2) + xz.std_err.powi(2)).sqrt();
    let slack = 3.0 * se + allowance;
    Ok(TriangleCheck {
        d_xy: xy.mean,
        d_yz: yz.mean,
        d_xz: xz.mean,
        slack,
        ok: xz.mean <= xy.mean + yz.mean + slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub triangle: Vec<TriangleCheck>,
    pub triangle_violations: usize,
    /// Largest |W(μ,ν) − W(ν,μ)| under mirrored seeds over all pairs.
    pub symmetry_max_diff: f64,
    pub self_distance_small_m: f64,
    pub self_distance_large_m: f64,
    pub self_distance_decreases: bool,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.triangle_violations == 0 && self.symmetry_max_diff == 0.0 && self.self_distance_decreases
    }
}

pub fn run_metric_axioms(cfg: &AxiomConfig) -> Result<AxiomReport> {
    if cfg.d == 0 || cfg.atoms == 0 || cfg.triples == 0 || cfg.trials < 2 {
        return config("axiom run needs d, atoms, triples >= 1 and trials >= 2");
    }
    if cfg.m_small == 0 || cfg.m_small >= cfg.m {
        return config("need 1 <= m_small < m");
    }
    let noise = NoiseModel::new(cfg.noise, cfg.sigma, cfg.d)?;
    let base = SeedTuple::new(cfg.seed);
    let mut triangle = Vec::new();
    let mut sym = 0.0f64;
    for t in 0..cfg.triples as u64 {
        let inst = base.role(Role::Instance).with(t);
        let ms: Vec<MeasureInput> = (0..3)
            .map(|k| random_discrete_measure(cfg.atoms, cfg.d, inst.with(k)).map(MeasureInput::Measure))
            .collect::<Result<_>>()?;
        triangle.push(check_triangle(&ms[0], &ms[1], &ms[2], &noise, cfg.m, cfg.trials, base.trial(t))?);
        let fwd = estimate_got(&ms[0], &ms[1], &noise, cfg.m, cfg.trials, base.with(t), true)?;
        let back = estimate_got_mirrored(&ms[1], &ms[0], &noise, cfg.m, cfg.trials, base.with(t), true)?;
        for (a, b) in fwd.values.iter().zip(&back.values) {
            sym = sym.max((a - b).abs());
        }
    }
    let mu = MeasureInput::Measure(random_discrete_measure(cfg.atoms, cfg.d, base.role(Role::Instance).with(u64::MAX))?);
    let small = estimate_got(&mu, &mu, &noise, cfg.m_small, cfg.trials, base.role(Role::Calibration), false)?;
    let large = estimate_got(&mu, &mu, &noise, cfg.m, cfg.trials, base.role(Role::Calibration), false)?;
    let violations = triangle.iter().filter(|c| !c.ok).count();
    Ok(AxiomReport {
        triangle,
        triangle_violations: violations,
        symmetry_max_diff: sym,
        self_distance_small_m: small.mean,
        self_distance_large_m: large.mean,
        self_distance_decreases: large.mean < small.mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanConvergenceRow {
    pub sigma: f64,
    pub mean: f64,
    pub std_err: f64,
    /// `mean − W1(μ, ν)`.
    pub gap: f64,
    pub lower: f64,
    pub upper: f64,
    /// Mean cost of the smoothed-optimal plans carried back to the unsmoothed atoms.
    pub plan_cost: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanConvergenceReport {
    pub exact: f64,
    pub rows: Vec<PlanConvergenceRow>,
}

impl PlanConvergenceReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }
}

fn jittered(mu: &DiscreteMeasure, noise: &NoiseModel, seed: SeedTuple) -> Result<DiscreteMeasure> {
    let mut pts = mu.points().clone();
    crate::got_estimator::add_noise(&mut pts, noise, seed)?;
    DiscreteMeasure::new(pts, mu.weights().to_vec())
}

/// Smoothed distances of a fixed pair along a decreasing σ sequence, each atom
/// carrying its own gaussian displacement shared across σ.
///
/// Every row checks `mean − W1 ∈ [−3·se, 2√d·σ + 3·se + allowance]`, and also
/// reports the cost, on the original atoms, of each smoothed-optimal plan.
pub fn run_plan_convergence(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    family: NoiseFamily,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<PlanConvergenceReport> {
    if !family.supports_crn() {
        return config(format!("plan convergence needs common random numbers, which {family} noise does not support"));
    }
    if mu.dim() != nu.dim() {
        return arg("measures differ in dimension");
    }
    if trials < 2 || sigmas.is_empty() {
        return config("need trials >= 2 and a non-empty sigma sequence");
    }
    if sigmas.windows(2).any(|w| w[1] >= w[0]) || sigmas.iter().any(|s| !(*s >= 0.0)) {
        return config("sigma sequence must be non-negative and strictly decreasing");
    }
    let d = mu.dim();
    let exact = solve_transport(mu, nu)?.cost;
    let base = SeedTuple::new(seed);
    let mut rows = Vec::new();
    for &sigma in sigmas {
        let noise = NoiseModel::new(family, sigma, d)?;
        let per_trial: Vec<(f64, f64)> = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let s = base.trial(t);
                let a = jittered(mu, &noise, s.role(Role::NoiseA))?;
                let b = jittered(nu, &noise, s.role(Role::NoiseB))?;
                let sol = solve_transport(&a, &b)?;
                let plan = weighted_plan_cost(&sol.coupling, mu, nu);
                Ok((sol.cost, plan))
            })
            .collect::<Result<_>>()?;
        let est: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
        let plans: Vec<f64> = per_trial.iter().map(|p| p.1).collect();
        let (mean, se) = mean_and_std_err(&est);
        let allowance = if sigma > 0.0 {
            let cal: Vec<f64> = (0..trials as u64)
                .map(|t| {
                    let s = base.role(Role::Calibration).trial(t);
                    let a = jittered(mu, &noise, s.role(Role::NoiseA))?;
                    let b = jittered(mu, &noise, s.role(Role::NoiseB))?;
                    Ok(solve_transport(&a, &b)?.cost)
                })
                .collect::<Result<_>>()?;
            2.0 * mean_and_std_err(&cal).0
        } else {
            0.0
        };
        let lower = -3.0 * se;
        let upper = 2.0 * (d as f64).sqrt() * sigma + 3.0 * se + allowance;
        let gap = mean - exact;
        rows.push(PlanConvergenceRow {
            sigma,
            mean,
            std_err: se,
            gap,
            lower,
            upper,
            plan_cost: mean_and_std_err(&plans).0,
            ok: gap >= lower && gap <= upper,
        });
    }
    Ok(PlanConvergenceReport { exact, rows })
}

fn weighted_plan_cost(plan: &[crate::ot_exact::CouplingEntry], mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    plan.iter()
        .map(|e| e.mass * crate::measures::euclidean(mu.points().point(e.i), nu.points().point(e.j)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCheck {
    pub pair: usize,
    pub d: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mean1: f64,
    pub mean2: f64,
    pub slack: f64,
    pub bound: f64,
    /// `mean(σ2) ≤ mean(σ1) + slack`.
    pub monotone_ok: bool,
    /// `mean(σ1) ≤ mean(σ2) + bound + slack`.
    pub stability_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub pairs: usize,
    pub max_d: usize,
    pub max_atoms: usize,
    pub sigmas: Vec<f64>,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Both sides of the stability sandwich on random discrete pairs, with common
/// random numbers across σ.
pub fn run_stability_sandwich(cfg: &StabilityConfig) -> Result<Vec<StabilityCheck>> {
    validate_sigmas(&cfg.sigmas)?;
    if cfg.max_d == 0 || cfg.max_atoms == 0 || cfg.m == 0 || cfg.trials < 2 {
        return config("stability run needs max_d, max_atoms, m >= 1 and trials >= 2");
    }
    let base = SeedTuple::new(cfg.seed);
    let per_pair: Vec<Vec<StabilityCheck>> = (0..cfg.pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = base.role(Role::Instance).with(p as u64).rng();
            let d = rng.random_range(1..=cfg.max_d);
            let na = rng.random_range(1..=cfg.max_atoms);
            let nb = rng.random_range(1..=cfg.max_atoms);
            let inst = base.role(Role::Instance).with(p as u64);
            let mu = MeasureInput::Measure(random_discrete_measure(na, d, inst.with(1))?);
            let nu = MeasureInput::Measure(random_discrete_measure(nb, d, inst.with(2))?);
            let seed = base.with(p as u64);
            let mut ests = Vec::new();
            let mut allow = Vec::new();
            for &s in &cfg.sigmas {
                let noise = NoiseModel::gaussian(s, d)?;
                ests.push(estimate_got(&mu, &nu, &noise, cfg.m, cfg.trials, seed, true)?);
                allow.push(calibrated_allowance(&[&mu, &nu], &noise, cfg.m, cfg.trials, seed)?);
            }
            let mut out = Vec::new();
            for i in 0..cfg.sigmas.len() {
                for j in i + 1..cfg.sigmas.len() {
                    let (e1, e2) = (&ests[i], &ests[j]);
                    let slack = 3.0 * pooled_std_err(e1, e2) + allow[i].max(allow[j]);
                    let bound = stability_bound(cfg.sigmas[i], cfg.sigmas[j], d)?;
                    out.push(StabilityCheck {
                        pair: p,
                        d,
                        sigma1: cfg.sigmas[i],
                        sigma2: cfg.sigmas[j],
                        mean1: e1.mean,
                        mean2: e2.mean,
                        slack,
                        bound,
                        monotone_ok: e2.mean <= e1.mean + slack,
                        stability_ok: e1.mean <= e2.mean + bound + slack,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiracCheck {
    pub d: usize,
    pub sigma: f64,
    pub mean: f64,
    pub std_err: f64,
    pub allowance: f64,
    pub ok: bool,
}

/// Smoothed distance between `δ_0` and `δ_{e1}`, whose exact value is 1 at every σ.
pub fn run_dirac_identity(dims: &[usize], sigmas: &[f64], m: usize, trials: usize, seed: u64) -> Result<Vec<DiracCheck>> {
    let mut out = Vec::new();
    for &d in dims {
        let x = vec![0.0; d];
        let mut y = vec![0.0; d];
        y[0] = 1.0;
        let mx = MeasureInput::Measure(DiscreteMeasure::dirac(&x)?);
        let my = MeasureInput::Measure(DiscreteMeasure::dirac(&y)?);
        for &sigma in sigmas {
            let noise = NoiseModel::gaussian(sigma, d)?;
            let s = SeedTuple::new(seed).with(d as u64);
            let est = estimate_got(&mx, &my, &noise, m, trials, s, false)?;
            let allowance = calibrated_allowance(&[&mx], &noise, m, trials, s)?;
            out.push(DiracCheck {
                d,
                sigma,
                mean: est.mean,
                std_err: est.std_err,
                allowance,
                ok: (est.mean - 1.0).abs() <= 3.0 * est.std_err + allowance,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub mean: f64,
    pub noise_allowance: f64,
    pub effective_diameter: f64,
    pub t: f64,
    pub bound: f64,
    pub fraction: f64,
    pub ok: bool,
}

/// Radius that holds a product-noise vector with high probability, `3σ√d`.
pub fn noise_allowance(sigma: f64, d: usize) -> f64 {
    3.0 * sigma * (d as f64).sqrt()
}

/// Fraction of one-sample estimates deviating from their mean by at least `t`,
/// with `t` set where the concentration bound for the noise-enlarged support
/// equals `level`.
pub fn run_concentration(
    source: &SourceSpec,
    sigma: f64,
    n: usize,
    m: usize,
    trials: usize,
    level: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    let diam = source
        .diameter()
        .filter(|d| *d > 0.0)
        .ok_or_else(|| Error::Config("concentration needs a source with bounded, non-degenerate support".into()))?;
    let noise = NoiseModel::gaussian(sigma, source.d)?;
    let est = estimate_one_sample(source, &noise, n, m, trials, SeedTuple::new(seed))?;
    let allowance = noise_allowance(sigma, source.d);
    let eff = diam + 2.0 * allowance;
    let t = concentration_threshold(eff, n, level)?;
    let bound = concentration_bound(eff, n, t)?.clamped;
    let far = est.values.iter().filter(|v| (*v - est.mean).abs() >= t).count();
    let fraction = far as f64 / trials as f64;
    Ok(ConcentrationReport {
        mean: est.mean,
        noise_allowance: allowance,
        effective_diameter: eff,
        t,
        bound,
        fraction,
        ok: fraction <= bound + 0.05,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornRow {
    pub instance: usize,
    pub epsilon: f64,
    pub relative_epsilon: f64,
    pub value: f64,
    pub exact: f64,
    pub median_cost: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Entropic values against the exact cost on pairs of `points`-point empirical
/// clouds drawn from `source`. Each ε is a fraction of the instance's median
/// pairwise cost, or an absolute value when `absolute` is set.
#[allow(clippy::too_many_arguments)]
pub fn run_sinkhorn_compare(
    source: &SourceSpec,
    instances: usize,
    points: usize,
    eps_values: &[f64],
    absolute: bool,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<SinkhornRow>> {
    let mut rows = Vec::new();
    for k in 0..instances {
        let s = SeedTuple::new(seed).with(k as u64);
        let a = crate::measures::make_empirical(crate::measures::sample_source(source, points, s.role(Role::SourceA))?)?;
        let b = crate::measures::make_empirical(crate::measures::sample_source(source, points, s.role(Role::SourceB))?)?;
        let exact = solve_transport(&a, &b)?.cost;
        let med = median_cost(&a, &b);
        for &e in eps_values {
            let (eps, rel) = if absolute { (e, e / med) } else { (e * med, e) };
            let sol = sinkhorn_solve(&a, &b, eps, max_iter, tol)?;
            rows.push(SinkhornRow {
                instance: k,
                epsilon: eps,
                relative_epsilon: rel,
                value: sol.value,
                exact,
                median_cost: med,
                iterations: sol.iterations,
                marginal_error: sol.marginal_error,
            });
        }
    }
    Ok(rows)
}
