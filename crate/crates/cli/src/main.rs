//! `got`: estimates, sweeps, bound tables and plots for the Gaussian-smoothed
//! 1-Wasserstein distance.
//!
//! Exit status is 0 on success, 1 when the run itself fails, and 2 for invalid
//! flags, configs or inputs.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod jobs;
mod output;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use got_core::experiments::{AxiomConfig, RunOptions, SigmaSweepConfig, SweepConfig, ARTIFACT_VERSION};
use got_core::measures::{SourceFamily, SourceSpec};
use got_core::noise::NoiseFamily;
use got_core::sinkhorn::{DEFAULT_MAX_ITER, DEFAULT_TOL};

use jobs::{BoundsJob, EstimateJob, Job, PlotJob, SinkhornJob};
use output::{manifest_path, RunManifest};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, configs or input files (exit 2).
    Usage(String),
    /// The computation or I/O failed (exit 1).
    Runtime(String),
}

impl From<got_core::Error> for Failure {
    fn from(e: got_core::Error) -> Self {
        match e {
            got_core::Error::Argument(_) | got_core::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "got", version, about = "Gaussian-smoothed 1-Wasserstein distance toolkit")]
struct Cli {
    /// Worker threads for sweeps (results do not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Record wall-clock milliseconds in `elapsed_ms` (outputs then differ between runs).
    #[arg(long, global = true)]
    timing: bool,
    /// Where to write the run manifest (default: `<out>.manifest.json`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a smoothed distance by Monte Carlo.
    #[command(allow_negative_numbers = true)]
    Estimate(EstimateArgs),
    /// Run the convergence-in-n sweep.
    #[command(allow_negative_numbers = true)]
    Convergence(ConvergenceArgs),
    /// Two-measure estimates across a sigma grid.
    #[command(allow_negative_numbers = true)]
    SigmaSweep(SigmaSweepArgs),
    /// Statistical checks of the metric axioms.
    #[command(allow_negative_numbers = true)]
    Axioms(AxiomArgs),
    /// Evaluate the closed-form bounds.
    #[command(allow_negative_numbers = true)]
    Bounds(BoundsArgs),
    /// Compare entropic and exact transport costs.
    #[command(allow_negative_numbers = true)]
    SinkhornCompare(SinkhornArgs),
    /// Render a result CSV as a log-log SVG.
    Plot(PlotArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceKind {
    UniformCube,
    Gaussian,
    DiracPair,
}

#[derive(Args)]
struct SourceArgs {
    /// Source distribution.
    #[arg(long, value_enum)]
    source: Option<SourceKind>,
    /// Dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Cube side length for `uniform-cube`.
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    /// Standard deviation for `gaussian`.
    #[arg(long, default_value_t = 1.0)]
    std: f64,
    /// First Dirac location: comma-separated coordinates, or one number for the first axis.
    #[arg(long)]
    x: Option<String>,
    /// Second Dirac location, same format as `--x`.
    #[arg(long)]
    y: Option<String>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| Failure::Usage(format!("cannot parse `{p}` in --{what}"))))
        .collect()
}

fn parse_point(s: &str, d: usize, what: &str) -> Result<Vec<f64>, Failure> {
    let v: Vec<f64> = parse_list(s, what)?;
    match v.len() {
        1 => {
            let mut p = vec![0.0; d];
            p[0] = v[0];
            Ok(p)
        }
        k if k == d => Ok(v),
        k => Err(Failure::Usage(format!("--{what} has {k} coordinates but --d is {d}"))),
    }
}

impl SourceArgs {
    fn spec(&self) -> Result<Option<SourceSpec>, Failure> {
        let Some(kind) = self.source else { return Ok(None) };
        let d = self.d.ok_or_else(|| Failure::Usage("--d is required with --source".into()))?;
        if d == 0 {
            return Err(Failure::Usage("--d must be at least 1".into()));
        }
        let family = match kind {
            SourceKind::UniformCube => SourceFamily::UniformCube { side: self.side },
            SourceKind::Gaussian => SourceFamily::IsotropicGaussian { std: self.std },
            SourceKind::DiracPair => {
                let x = self.x.as_deref().ok_or_else(|| Failure::Usage("dirac-pair needs --x".into()))?;
                let y = self.y.as_deref().ok_or_else(|| Failure::Usage("dirac-pair needs --y".into()))?;
                SourceFamily::DiracPair {
                    x: parse_point(x, d, "x")?,
                    y: parse_point(y, d, "y")?,
                    component: Default::default(),
                }
            }
        };
        let spec = SourceSpec { family, d };
        spec.validate()?;
        Ok(Some(spec))
    }

    fn require(&self) -> Result<SourceSpec, Failure> {
        self.spec()?.ok_or_else(|| Failure::Usage("--source is required".into()))
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    sigma: f64,
    /// Number of source samples (ignored for dirac-pair, which compares the two atoms).
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    /// Monte Carlo points per cloud [default: max(n, 1000)].
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Uniform,
    Triangular,
}

impl From<NoiseArg> for NoiseFamily {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Gaussian => NoiseFamily::Gaussian,
            NoiseArg::Uniform => NoiseFamily::Uniform,
            NoiseArg::Triangular => NoiseFamily::Triangular,
        }
    }
}

#[derive(Args)]
struct ConvergenceArgs {
    /// TOML sweep configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Comma-separated sigma values.
    #[arg(long)]
    sigma_grid: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    n_grid: Option<String>,
    /// Fixed Monte Carlo size instead of m = n.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Draw independent noise for each sigma.
    #[arg(long)]
    no_crn: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SigmaSweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long)]
    sigma_grid: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_crn: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AxiomArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long)]
    triples: Option<usize>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    m_small: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    d: usize,
    /// Subgaussian constant of the source.
    #[arg(long, default_value_t = 0.0)]
    k: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    /// Density-bound constant [default: certified value for the noise family].
    #[arg(long)]
    c1: Option<f64>,
    /// Lower sigma for the stability bound [default: 0].
    #[arg(long)]
    sigma1: Option<f64>,
    /// Support diameter for the concentration bound.
    #[arg(long)]
    diam: Option<f64>,
    /// Deviation for the concentration bound.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SinkhornArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Points per empirical cloud.
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    instances: usize,
    /// Absolute regularization strength.
    #[arg(long, conflicts_with = "epsilon_relative")]
    epsilon: Option<f64>,
    /// Regularization as a fraction of the median pairwise cost.
    #[arg(long)]
    epsilon_relative: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Result CSV.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    manifest_file: PathBuf,
    /// Write the primary output here instead of the recorded path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Seed precedence: flag, then config file, then `GOT_SEED`, then 0.
fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("GOT_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("GOT_SEED=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn flag_or_env_seed(flag: Option<u64>) -> Result<u64, Failure> {
    Ok(flag.or(env_seed()?).unwrap_or(0))
}

fn load_table(path: Option<&Path>) -> Result<toml::Table, Failure> {
    match path {
        None => Ok(toml::Table::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn to_toml<T: serde::Serialize>(v: &T) -> toml::Value {
    toml::Value::try_from(v).expect("plain data converts to TOML")
}

fn finish_table<T: serde::de::DeserializeOwned>(mut table: toml::Table, seed_flag: Option<u64>, what: &str) -> Result<T, Failure> {
    if let Some(s) = seed_flag {
        table.insert("seed".into(), to_toml(&s));
    } else if !table.contains_key("seed") {
        if let Some(s) = env_seed()? {
            table.insert("seed".into(), to_toml(&s));
        }
    }
    for key in ["source", "other"] {
        if let Some(toml::Value::Table(t)) = table.get(key) {
            reject_unknown_source_keys(t, key)?;
        }
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::Usage(format!("invalid {what} configuration: {e}")))
}

/// Flattened source tables cannot deny unknown fields through serde, so a
/// round trip finds keys that would otherwise be silently dropped.
fn reject_unknown_source_keys(t: &toml::Table, key: &str) -> Result<(), Failure> {
    let spec: SourceSpec = toml::Value::Table(t.clone())
        .try_into()
        .map_err(|e| Failure::Usage(format!("invalid `{key}` table: {e}")))?;
    let toml::Value::Table(known) = to_toml(&spec) else { unreachable!("a source serializes to a table") };
    match t.keys().find(|k| !known.contains_key(*k)) {
        Some(k) => Err(Failure::Usage(format!("unknown field `{k}` in `{key}` table"))),
        None => Ok(()),
    }
}

fn noise_name(n: NoiseArg) -> toml::Value {
    to_toml(&NoiseFamily::from(n))
}

fn build_job(command: Command) -> Result<(Job, Option<PathBuf>), Failure> {
    match command {
        Command::Estimate(a) => {
            let source = a.source.require()?;
            let m = a.m.unwrap_or(a.n.max(1000));
            let job = EstimateJob {
                source,
                noise: a.noise.into(),
                sigma: a.sigma,
                n: a.n,
                m,
                trials: a.trials,
                seed: flag_or_env_seed(a.seed)?,
            };
            if !(job.sigma.is_finite() && job.sigma >= 0.0) {
                return Err(Failure::Usage(format!("--sigma must be non-negative, got {}", job.sigma)));
            }
            if job.n == 0 || job.m == 0 || job.trials == 0 {
                return Err(Failure::Usage("--n, --m and --trials must be at least 1".into()));
            }
            Ok((Job::Estimate(job), a.out))
        }
        Command::Convergence(a) => {
            let mut t = load_table(a.config.as_deref())?;
            if let Some(spec) = a.source.spec()? {
                t.insert("source".into(), to_toml(&spec));
            }
            if let Some(n) = a.noise {
                t.insert("noise".into(), noise_name(n));
            }
            if let Some(s) = &a.sigma_grid {
                t.insert("sigma_grid".into(), to_toml(&parse_list::<f64>(s, "sigma-grid")?));
            }
            if let Some(s) = &a.n_grid {
                t.insert("n_grid".into(), to_toml(&parse_list::<usize>(s, "n-grid")?));
            }
            if let Some(m) = a.m {
                t.insert("m_rule".into(), to_toml(&got_core::experiments::MRule::Fixed(m)));
            }
            if let Some(k) = a.trials {
                t.insert("trials".into(), to_toml(&k));
            }
            if a.no_crn {
                t.insert("crn".into(), toml::Value::Boolean(false));
            }
            let cfg: SweepConfig = finish_table(t, a.seed, "sweep")?;
            cfg.validate()?;
            Ok((Job::Convergence(cfg), a.out))
        }
        Command::SigmaSweep(a) => {
            let mut t = load_table(a.config.as_deref())?;
            if let Some(spec) = a.source.spec()? {
                t.insert("source".into(), to_toml(&spec));
            }
            if let Some(n) = a.noise {
                t.insert("noise".into(), noise_name(n));
            }
            if let Some(s) = &a.sigma_grid {
                t.insert("sigma_grid".into(), to_toml(&parse_list::<f64>(s, "sigma-grid")?));
            }
            if let Some(m) = a.m {
                t.insert("m".into(), to_toml(&m));
            }
            if let Some(k) = a.trials {
                t.insert("trials".into(), to_toml(&k));
            }
            if a.no_crn {
                t.insert("crn".into(), toml::Value::Boolean(false));
            }
            let cfg: SigmaSweepConfig = finish_table(t, a.seed, "sigma-sweep")?;
            cfg.validate()?;
            Ok((Job::SigmaSweep(cfg), a.out))
        }
        Command::Axioms(a) => {
            let mut t = load_table(a.config.as_deref())?;
            let defaults: [(&str, Option<toml::Value>, toml::Value); 8] = [
                ("d", a.d.map(|v| to_toml(&v)), to_toml(&3usize)),
                ("sigma", a.sigma.map(|v| to_toml(&v)), to_toml(&1.0f64)),
                ("noise", a.noise.map(noise_name), to_toml(&NoiseFamily::Gaussian)),
                ("triples", a.triples.map(|v| to_toml(&v)), to_toml(&20usize)),
                ("atoms", a.atoms.map(|v| to_toml(&v)), to_toml(&6usize)),
                ("m", a.m.map(|v| to_toml(&v)), to_toml(&200usize)),
                ("m_small", a.m_small.map(|v| to_toml(&v)), to_toml(&50usize)),
                ("trials", a.trials.map(|v| to_toml(&v)), to_toml(&5usize)),
            ];
            for (key, flag, default) in defaults {
                match flag {
                    Some(v) => {
                        t.insert(key.into(), v);
                    }
                    None => {
                        t.entry(key).or_insert(default);
                    }
                }
            }
            if !t.contains_key("seed") && a.seed.is_none() && env_seed()?.is_none() {
                t.insert("seed".into(), to_toml(&0u64));
            }
            let cfg: AxiomConfig = finish_table(t, a.seed, "axioms")?;
            Ok((Job::Axioms(cfg), a.out))
        }
        Command::Bounds(a) => Ok((
            Job::Bounds(BoundsJob {
                sigma: a.sigma,
                d: a.d,
                k: a.k,
                n: a.n,
                noise: a.noise.into(),
                c1: a.c1,
                sigma1: a.sigma1,
                diam: a.diam,
                t: a.t,
            }),
            a.out,
        )),
        Command::SinkhornCompare(a) => {
            let source = a.source.require()?;
            let (epsilon, absolute) = match (a.epsilon, a.epsilon_relative) {
                (Some(e), None) => (e, true),
                (None, Some(r)) => (r, false),
                (None, None) => (1e-2, false),
                (Some(_), Some(_)) => unreachable!("clap rejects both"),
            };
            if !(epsilon > 0.0) {
                return Err(Failure::Usage(format!("epsilon must be positive, got {epsilon}")));
            }
            if a.n == 0 || a.instances == 0 {
                return Err(Failure::Usage("--n and --instances must be at least 1".into()));
            }
            Ok((
                Job::SinkhornCompare(SinkhornJob {
                    source,
                    points: a.n,
                    instances: a.instances,
                    epsilon,
                    absolute,
                    max_iter: a.max_iter,
                    tol: a.tol,
                    seed: flag_or_env_seed(a.seed)?,
                }),
                a.out,
            ))
        }
        Command::Plot(a) => Ok((
            Job::Plot(PlotJob {
                input: a.input.to_string_lossy().into_owned(),
                title: a.title,
            }),
            Some(a.out),
        )),
        Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (job, out, mut opts) = match cli.command {
        Command::Replay(r) => {
            let m = RunManifest::load(&r.manifest_file)?;
            let out = r.out.or_else(|| m.outputs.first().map(PathBuf::from));
            let opts = RunOptions {
                jobs: cli.jobs.or(m.jobs),
                timing: m.timing,
            };
            (m.job, out, opts)
        }
        other => {
            let (job, out) = build_job(other)?;
            (job, out, RunOptions { jobs: cli.jobs, timing: cli.timing })
        }
    };
    if cli.timing {
        opts.timing = true;
    }
    if opts.jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let started = now();
    let outcome = job.run(out.as_deref(), opts)?;
    let manifest = RunManifest {
        seed: job.seed(),
        config_hash: job.hash(),
        started,
        finished: now(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        outputs: outcome.outputs.iter().map(|p| p.to_string_lossy().into_owned()).collect(),
        jobs: opts.jobs,
        timing: opts.timing,
        job,
    };
    manifest.save(&manifest_path(cli.manifest.as_deref(), out.as_deref(), manifest.job.name()))?;
    print!("{}", outcome.stdout);
    match outcome.partial_failure {
        Some(msg) => Err(Failure::Runtime(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
