//! Monte Carlo estimates of the smoothed distance `W1(μ∗G_σ, ν∗G_σ)`.
//!
//! Each trial discretizes both smoothed measures with `m` points (a draw from
//! the underlying measure plus an independent noise draw) and solves the exact
//! transport problem between the two uniform clouds. The result is a plug-in
//! estimate whose upward bias decays like `m^{-1/2}`.

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{arg, Result};
use crate::measures::{make_empirical, sample_source, DiscreteMeasure, PointCloud, SourceSpec};
use crate::noise::NoiseModel;
use crate::ot_exact::solve_transport;
use crate::rng::{Role, SeedTuple};

pub use crate::ot_exact::coupling_cost;

/// Either side of an estimate: a distribution to sample, or a discrete measure
/// whose atoms are resampled.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureInput {
    Source(SourceSpec),
    Measure(DiscreteMeasure),
}

impl MeasureInput {
    pub fn dim(&self) -> usize {
        match self {
            MeasureInput::Source(s) => s.d,
            MeasureInput::Measure(m) => m.dim(),
        }
    }
}

impl From<SourceSpec> for MeasureInput {
    fn from(s: SourceSpec) -> Self {
        MeasureInput::Source(s)
    }
}

impl From<DiscreteMeasure> for MeasureInput {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureInput::Measure(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over trials divided by `√trials` (0 for one trial).
    pub std_err: f64,
    pub trials: usize,
    pub m: usize,
    pub sigma: f64,
    pub bias_note: String,
    /// Per-trial values in trial order.
    pub values: Vec<f64>,
}

impl Estimate {
    pub fn from_values(values: Vec<f64>, m: usize, sigma: f64, bias_note: String) -> Self {
        let (mean, std_err) = mean_and_std_err(&values);
        Self {
            mean,
            std_err,
            trials: values.len(),
            m,
            sigma,
            bias_note,
            values,
        }
    }
}

pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// `√(se1² + se2²)`, the standard error of a difference of independent means.
pub fn pooled_std_err(a: &Estimate, b: &Estimate) -> f64 {
    a.std_err.hypot(b.std_err)
}

/// Which side of the pair a cloud is drawn for; mirroring swaps the streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

impl Side {
    fn roles(self) -> (Role, Role, Role) {
        match self {
            Side::A => (Role::SourceA, Role::NoiseA, Role::ResampleA),
            Side::B => (Role::SourceB, Role::NoiseB, Role::ResampleB),
        }
    }
}

/// Stream for the noise of one side. With common random numbers the unit draws
/// are shared across σ; otherwise σ is folded into the stream.
fn noise_seed(seed: SeedTuple, role: Role, noise: &NoiseModel, crn: bool) -> SeedTuple {
    let s = seed.role(role);
    if crn && noise.family.supports_crn() {
        s
    } else {
        s.with(noise.sigma.to_bits())
    }
}

/// Adds `σ·Z` to the cloud in place, `Z` drawn from the unit-scale family.
pub fn add_noise(cloud: &mut PointCloud, noise: &NoiseModel, seed: SeedTuple) -> Result<()> {
    if noise.is_degenerate() {
        return Ok(());
    }
    if noise.d != cloud.dim() {
        return arg(format!("noise dimension {} does not match data dimension {}", noise.d, cloud.dim()));
    }
    let unit = noise.sample_unit(cloud.len(), seed);
    for (x, z) in cloud.as_mut_slice().iter_mut().zip(unit.as_slice()) {
        *x += noise.sigma * z;
    }
    Ok(())
}

/// `m` atoms of `mu` drawn i.i.d. from its weights.
pub fn resample_atoms(mu: &DiscreteMeasure, m: usize, seed: SeedTuple) -> Result<PointCloud> {
    if m == 0 {
        return arg("resample size must be at least 1");
    }
    let mut rng = seed.rng();
    let idx: Vec<usize> = if mu.len() == 1 {
        vec![0; m]
    } else {
        let w = WeightedIndex::new(mu.weights()).map_err(|e| crate::Error::Argument(e.to_string()))?;
        (0..m).map(|_| w.sample(&mut rng)).collect()
    };
    let mut data = Vec::with_capacity(m * mu.dim());
    for i in idx {
        data.extend_from_slice(mu.points().point(i));
    }
    PointCloud::new(mu.dim(), data)
}

/// Uniform resample with replacement, used for empirical measures.
fn resample_uniform(cloud: &PointCloud, m: usize, seed: SeedTuple) -> Result<PointCloud> {
    let mut rng = seed.rng();
    let n = cloud.len();
    let mut data = Vec::with_capacity(m * cloud.dim());
    for _ in 0..m {
        data.extend_from_slice(cloud.point(rng.random_range(0..n)));
    }
    PointCloud::new(cloud.dim(), data)
}

/// The `m` un-noised points for one side of a trial.
pub fn draw_base_cloud(input: &MeasureInput, m: usize, seed: SeedTuple, side: Side) -> Result<PointCloud> {
    let (source_role, _, resample_role) = side.roles();
    match input {
        MeasureInput::Source(spec) => sample_source(spec, m, seed.role(source_role)),
        MeasureInput::Measure(mu) => resample_atoms(mu, m, seed.role(resample_role)),
    }
}

/// Base and smoothed clouds for one side of one trial.
pub struct SmoothedCloud {
    pub base: PointCloud,
    pub smoothed: PointCloud,
}

pub fn draw_smoothed_cloud(
    input: &MeasureInput,
    noise: &NoiseModel,
    m: usize,
    seed: SeedTuple,
    side: Side,
    crn: bool,
) -> Result<SmoothedCloud> {
    let (_, noise_role, _) = side.roles();
    // without common random numbers every σ gets its own source draws as well
    let base_seed = if crn { seed } else { seed.with(noise.sigma.to_bits()) };
    let base = draw_base_cloud(input, m, base_seed, side)?;
    let mut smoothed = base.clone();
    add_noise(&mut smoothed, noise, noise_seed(seed, noise_role, noise, crn))?;
    Ok(SmoothedCloud { base, smoothed })
}

fn exact_w1(a: PointCloud, b: PointCloud) -> Result<f64> {
    Ok(solve_transport(&make_empirical(a)?, &make_empirical(b)?)?.cost)
}

fn validate(noise: &NoiseModel, m: usize, trials: usize, dims: &[usize]) -> Result<()> {
    if !(noise.sigma >= 0.0) {
        return arg(format!("sigma must be non-negative, got {}", noise.sigma));
    }
    if m == 0 || trials == 0 {
        return arg("m and trials must be at least 1");
    }
    if dims.iter().any(|&d| d != noise.d) {
        return arg(format!("dimension mismatch between inputs {dims:?} and noise {}", noise.d));
    }
    Ok(())
}

fn note(mode: &str, noise: &NoiseModel, crn: bool) -> String {
    let crn_state = match (crn, noise.family.supports_crn()) {
        (true, true) => "crn",
        (true, false) => "crn-source-only",
        (false, _) => "independent",
    };
    format!("{mode};{};{crn_state}", noise.family)
}

fn run_trials<F>(trials: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    (0..trials as u64).into_par_iter().map(f).collect()
}

/// Estimates `W1(μ∗G_σ, ν∗G_σ)` over `trials` independent trials of `m` points
/// per side.
///
/// With `crn`, the source draws and (for scale families) the unit noise draws
/// depend only on `(seed, trial)`, so estimates at different σ share them.
pub fn estimate_got(
    mu: &MeasureInput,
    nu: &MeasureInput,
    noise: &NoiseModel,
    m: usize,
    trials: usize,
    seed: SeedTuple,
    crn: bool,
) -> Result<Estimate> {
    estimate_got_sided(mu, nu, noise, m, trials, seed, crn, false)
}

/// As [`estimate_got`], with the per-side random streams swapped. Calling it
/// with `(nu, mu)` reproduces the clouds of `estimate_got(mu, nu)` exactly.
pub fn estimate_got_mirrored(
    mu: &MeasureInput,
    nu: &MeasureInput,
    noise: &NoiseModel,
    m: usize,
    trials: usize,
    seed: SeedTuple,
    crn: bool,
) -> Result<Estimate> {
    estimate_got_sided(mu, nu, noise, m, trials, seed, crn, true)
}

#[allow(clippy::too_many_arguments)]
fn estimate_got_sided(
    mu: &MeasureInput,
    nu: &MeasureInput,
    noise: &NoiseModel,
    m: usize,
    trials: usize,
    seed: SeedTuple,
    crn: bool,
    mirror: bool,
) -> Result<Estimate> {
    validate(noise, m, trials, &[mu.dim(), nu.dim()])?;
    let (sa, sb) = if mirror { (Side::B, Side::A) } else { (Side::A, Side::B) };
    let values = run_trials(trials, |t| {
        let s = seed.trial(t);
        let a = draw_smoothed_cloud(mu, noise, m, s, sa, crn)?;
        let b = draw_smoothed_cloud(nu, noise, m, s, sb, crn)?;
        if mirror {
            exact_w1(b.smoothed, a.smoothed)
        } else {
            exact_w1(a.smoothed, b.smoothed)
        }
    })?;
    Ok(Estimate::from_values(values, m, noise.sigma, note("two-measure plug-in", noise, crn)))
}

/// Estimates `E W1(μ̂_n∗G_σ, μ∗G_σ)`.
///
/// Per trial, `n` source draws form `μ̂_n`. Cloud A takes those atoms as they
/// are when `m == n` and resamples `m` of them with replacement otherwise; cloud
/// B is `m` fresh source draws. Both get independent noise. Source draws and
/// unit noise depend only on `(seed, trial)`, so a σ-sweep with gaussian noise
/// uses common random numbers automatically.
pub fn estimate_one_sample(
    source: &SourceSpec,
    noise: &NoiseModel,
    n: usize,
    m: usize,
    trials: usize,
    seed: SeedTuple,
) -> Result<Estimate> {
    validate(noise, m, trials, &[source.d])?;
    source.validate()?;
    if n == 0 {
        return arg("n must be at least 1");
    }
    if m < n {
        return arg(format!("m = {m} must be at least n = {n}"));
    }
    let values = run_trials(trials, |t| {
        let s = seed.trial(t);
        let atoms = sample_source(source, n, s.role(Role::Empirical))?;
        let mut a = if m == n {
            atoms
        } else {
            resample_uniform(&atoms, m, s.role(Role::ResampleA))?
        };
        add_noise(&mut a, noise, noise_seed(s, Role::NoiseA, noise, true))?;
        let mut b = sample_source(source, m, s.role(Role::SourceB))?;
        add_noise(&mut b, noise, noise_seed(s, Role::NoiseB, noise, true))?;
        exact_w1(a, b)
    })?;
    Ok(Estimate::from_values(values, m, noise.sigma, note("one-sample plug-in", noise, true)))
}

/// Bias scale `c_est` such that the plug-in bias at `m` points is about
/// `c_est·m^{-1/2}`, measured as the self-distance of `mu` with independent
/// draws on both sides.
pub fn calibrate_bias_constant(
    mu: &MeasureInput,
    noise: &NoiseModel,
    m: usize,
    trials: usize,
    seed: SeedTuple,
) -> Result<f64> {
    let est = estimate_got(mu, mu, noise, m, trials, seed.role(Role::Calibration), false)?;
    Ok(est.mean * (m as f64).sqrt())
}

/// `2·c_est·m^{-1/2}`.
pub fn bias_allowance(c_est: f64, m: usize) -> f64 {
    2.0 * c_est / (m as f64).sqrt()
}
