//! Fully resolved command invocations. A job is what a manifest records and
//! what `replay` re-executes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use got_core::experiments::{
    config_hash, run_convergence_sweep, run_metric_axioms, run_sigma_sweep, run_sinkhorn_compare,
    summarize, AxiomConfig, ResultRow, ResultTable, RunOptions, SigmaSweepConfig, SweepConfig,
};
use got_core::got_estimator::{estimate_got, estimate_one_sample, MeasureInput};
use got_core::measures::{DiscreteMeasure, SourceFamily, SourceSpec};
use got_core::noise::{default_c1, NoiseFamily, NoiseModel};
use got_core::theory_bounds::{bound_table, BoundInputs};
use got_core::SeedTuple;
use serde::{Deserialize, Serialize};

use crate::output::write_atomic;
use crate::plot::render_svg;
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateJob {
    pub source: SourceSpec,
    pub noise: NoiseFamily,
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsJob {
    pub sigma: f64,
    pub d: usize,
    pub k: f64,
    pub n: usize,
    pub noise: NoiseFamily,
    pub c1: Option<f64>,
    pub sigma1: Option<f64>,
    pub diam: Option<f64>,
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornJob {
    pub source: SourceSpec,
    pub points: usize,
    pub instances: usize,
    pub epsilon: f64,
    /// `epsilon` is absolute rather than a fraction of the median cost.
    pub absolute: bool,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotJob {
    pub input: String,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Job {
    Estimate(EstimateJob),
    Convergence(SweepConfig),
    SigmaSweep(SigmaSweepConfig),
    Axioms(AxiomConfig),
    Bounds(BoundsJob),
    SinkhornCompare(SinkhornJob),
    Plot(PlotJob),
}

/// What a job produced: text for stdout, files written, and whether part of
/// the work failed (outputs are still written in that case).
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub outputs: Vec<PathBuf>,
    pub partial_failure: Option<String>,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Estimate(_) => "estimate",
            Job::Convergence(_) => "convergence",
            Job::SigmaSweep(_) => "sigma-sweep",
            Job::Axioms(_) => "axioms",
            Job::Bounds(_) => "bounds",
            Job::SinkhornCompare(_) => "sinkhorn-compare",
            Job::Plot(_) => "plot",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::Estimate(j) => Some(j.seed),
            Job::Convergence(c) => Some(c.seed),
            Job::SigmaSweep(c) => Some(c.seed),
            Job::Axioms(c) => Some(c.seed),
            Job::SinkhornCompare(j) => Some(j.seed),
            Job::Bounds(_) | Job::Plot(_) => None,
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn run(&self, out: Option<&Path>, opts: RunOptions) -> Result<Outcome, Failure> {
        match self {
            Job::Estimate(j) => run_estimate(j, out, opts),
            Job::Convergence(c) => {
                let table = run_convergence_sweep(c, opts)?;
                table_outcome(&table, out)
            }
            Job::SigmaSweep(c) => {
                let table = run_sigma_sweep(c, opts)?;
                table_outcome(&table, out)
            }
            Job::Axioms(c) => run_axioms(c, out),
            Job::Bounds(j) => run_bounds(j, out),
            Job::SinkhornCompare(j) => run_sinkhorn(j, out),
            Job::Plot(j) => run_plot(j, out),
        }
    }
}

fn save(out: Option<&Path>, contents: &str, outcome: &mut Outcome) -> Result<(), Failure> {
    if let Some(path) = out {
        write_atomic(path, contents.as_bytes())?;
        outcome.outputs.push(path.to_path_buf());
    }
    Ok(())
}

fn table_outcome(table: &ResultTable, out: Option<&Path>) -> Result<Outcome, Failure> {
    let mut outcome = Outcome::default();
    for c in summarize(table) {
        let _ = writeln!(
            outcome.stdout,
            "sigma={} n={} m={} mean={:.6} std_err={:.6}",
            c.sigma, c.n, c.m, c.mean, c.std_err
        );
    }
    save(out, &table.to_csv(), &mut outcome)?;
    if !table.failures.is_empty() {
        let msgs: Vec<String> = table
            .failures
            .iter()
            .map(|f| format!("sigma={} n={}: {}", f.sigma, f.n, f.message))
            .collect();
        outcome.partial_failure = Some(format!("{} cell(s) failed: {}", msgs.len(), msgs.join("; ")));
    }
    Ok(outcome)
}

fn run_estimate(j: &EstimateJob, out: Option<&Path>, opts: RunOptions) -> Result<Outcome, Failure> {
    let d = j.source.d;
    let noise = NoiseModel::new(j.noise, j.sigma, d)?;
    let started = std::time::Instant::now();
    let est = match &j.source.family {
        SourceFamily::DiracPair { x, y, .. } => {
            let mu = MeasureInput::Measure(DiscreteMeasure::dirac(x)?);
            let nu = MeasureInput::Measure(DiscreteMeasure::dirac(y)?);
            estimate_got(&mu, &nu, &noise, j.m, j.trials, SeedTuple::new(j.seed), false)?
        }
        _ => estimate_one_sample(&j.source, &noise, j.n, j.m, j.trials, SeedTuple::new(j.seed))?,
    };
    let ms = if opts.timing {
        started.elapsed().as_millis() as u64 / j.trials as u64
    } else {
        0
    };
    let table = ResultTable {
        rows: est
            .values
            .iter()
            .enumerate()
            .map(|(trial, &estimate)| ResultRow {
                d,
                sigma: j.sigma,
                n: j.n,
                m: j.m,
                trial,
                estimate,
                elapsed_ms: ms,
            })
            .collect(),
        ..Default::default()
    };
    let mut outcome = Outcome {
        stdout: format!(
            "{:.6} ± {:.6} (trials={}, m={}, {})\n",
            est.mean, est.std_err, est.trials, est.m, est.bias_note
        ),
        ..Default::default()
    };
    save(out, &table.to_csv(), &mut outcome)?;
    Ok(outcome)
}

fn run_axioms(c: &AxiomConfig, out: Option<&Path>) -> Result<Outcome, Failure> {
    let rep = run_metric_axioms(c)?;
    let mut outcome = Outcome::default();
    let _ = writeln!(
        outcome.stdout,
        "triangle: {} of {} triples violated",
        rep.triangle_violations,
        rep.triangle.len()
    );
    let _ = writeln!(outcome.stdout, "symmetry: max mirrored difference {:e}", rep.symmetry_max_diff);
    let _ = writeln!(
        outcome.stdout,
        "self-distance: {:.6} at m={} -> {:.6} at m={}",
        rep.self_distance_small_m, c.m_small, rep.self_distance_large_m, c.m
    );
    let _ = writeln!(outcome.stdout, "{}", if rep.passed() { "all checks passed" } else { "some checks failed" });
    let mut json = serde_json::to_string_pretty(&rep).expect("report serializes");
    json.push('\n');
    save(out, &json, &mut outcome)?;
    Ok(outcome)
}

fn run_bounds(j: &BoundsJob, out: Option<&Path>) -> Result<Outcome, Failure> {
    let c1 = match j.c1 {
        Some(c) => c,
        None if j.sigma > 0.0 => default_c1(&NoiseModel::new(j.noise, j.sigma, j.d)?)?,
        None => 1.0,
    };
    let rows = bound_table(&BoundInputs {
        sigma: j.sigma,
        d: j.d,
        k: j.k,
        n: j.n,
        c1,
        sigma1: j.sigma1,
        diam: j.diam,
        t: j.t,
    })?;
    let mut outcome = Outcome::default();
    let mut csv = String::from("name,value\n");
    for r in &rows {
        let inputs: Vec<String> = r.inputs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(outcome.stdout, "{:<24} {:<24} {}", r.name, r.value, inputs.join(" "));
        let _ = writeln!(csv, "{},{}", r.name, r.value);
    }
    save(out, &csv, &mut outcome)?;
    Ok(outcome)
}

fn run_sinkhorn(j: &SinkhornJob, out: Option<&Path>) -> Result<Outcome, Failure> {
    let rows = run_sinkhorn_compare(
        &j.source,
        j.instances,
        j.points,
        &[j.epsilon],
        j.absolute,
        j.max_iter,
        j.tol,
        j.seed,
    )?;
    let mut outcome = Outcome::default();
    let mut csv = String::from("instance,epsilon,relative_epsilon,value,exact,gap,iterations,marginal_error\n");
    for r in &rows {
        let gap = r.value - r.exact;
        let _ = writeln!(
            outcome.stdout,
            "instance {}: eps={:.3e} entropic={:.6} exact={:.6} gap={:.3e} iterations={}",
            r.instance, r.epsilon, r.value, r.exact, gap, r.iterations
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.instance, r.epsilon, r.relative_epsilon, r.value, r.exact, gap, r.iterations, r.marginal_error
        );
    }
    save(out, &csv, &mut outcome)?;
    Ok(outcome)
}

fn run_plot(j: &PlotJob, out: Option<&Path>) -> Result<Outcome, Failure> {
    let text = std::fs::read_to_string(&j.input)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", j.input)))?;
    let table = ResultTable::from_csv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", j.input)))?;
    if table.rows.is_empty() {
        return Err(Failure::Usage(format!("{} has no data rows", j.input)));
    }
    let title = j.title.clone().unwrap_or_else(|| "Convergence in n (log-log)".to_string());
    let svg = render_svg(&table, &title);
    let mut outcome = Outcome::default();
    let _ = writeln!(outcome.stdout, "plotted {} curve(s)", table.sigmas().len());
    save(out, &svg, &mut outcome)?;
    Ok(outcome)
}
