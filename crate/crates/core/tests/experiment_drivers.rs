use got_core::experiments::{
    check_sigma_ordering, check_triangle, fit_loglog_slope, geometric_grid, run_convergence_sweep,
    run_metric_axioms, run_plan_convergence, run_sigma_sweep, summarize, AxiomConfig, MRule, ResultRow,
    ResultTable, RunOptions, SigmaSweepConfig, SweepConfig,
};
use got_core::got_estimator::MeasureInput;
use got_core::measures::{make_empirical, DiscreteMeasure, PointCloud, SourceSpec};
use got_core::noise::{NoiseFamily, NoiseModel};
use got_core::rng::SeedTuple;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(f: impl Fn(usize) -> f64, ns: &[usize]) -> ResultTable {
    let rows = ns
        .iter()
        .flat_map(|&n| {
            (0..3).map(move |trial| (n, trial))
        })
        .map(|(n, trial)| ResultRow { d: 1, sigma: 1.0, n, m: n, trial, estimate: f(n), elapsed_ms: 0 })
        .collect();
    ResultTable { rows, ..Default::default() }
}

#[test]
fn slope_of_exact_power_laws() {
    let ns = geometric_grid(10, 3000, 8);
    let fit = fit_loglog_slope(&synthetic(|n| 3.0 / (n as f64).sqrt(), &ns), 1.0).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    let fit = fit_loglog_slope(&synthetic(|n| (n as f64).powf(-0.2), &ns), 1.0).unwrap();
    assert!((fit.slope + 0.2).abs() < 1e-12);
}

proptest! {
    #[test]
    fn slope_recovers_any_exponent(p in -2.0f64..1.0, c in 0.01f64..100.0) {
        let ns = [10, 30, 100, 300, 1000];
        let fit = fit_loglog_slope(&synthetic(|n| c * (n as f64).powf(p), &ns), 1.0).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-12);
    }
}

#[test]
fn slope_flags_and_excludes() {
    let table = synthetic(|n| if n == 30 { 0.0 } else { 1.0 / n as f64 }, &[10, 30, 100, 300, 1000]);
    let fit = fit_loglog_slope(&table, 1.0).unwrap();
    assert_eq!(fit.excluded_nonpositive, vec![30]);
    assert!((fit.slope + 1.0).abs() < 1e-12);
    assert!(fit_loglog_slope(&synthetic(|_| 1.0, &[10, 20, 30]), 1.0).is_err());
    // a bent head gets dropped when the full fit is poor
    let bent = synthetic(|n| if n == 10 { 1e-3 } else { 1.0 / (n as f64).sqrt() }, &[10, 30, 100, 300, 1000]);
    let fit = fit_loglog_slope(&bent, 1.0).unwrap();
    assert_eq!(fit.dropped_smallest, Some(10));
    assert!((fit.slope + 0.5).abs() < 1e-12);
}

#[test]
fn dirac_source_sweep_is_zero() {
    let mut cfg = SweepConfig::new(SourceSpec::dirac_pair(vec![0.2], vec![0.8]), vec![0.0]);
    cfg.n_grid = vec![10, 100];
    cfg.trials = 2;
    let table = run_convergence_sweep(&cfg, RunOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.estimate.abs() < 1e-12));
}

#[test]
fn sweep_shape_and_replay() {
    let mut cfg = SweepConfig::new(SourceSpec::uniform_cube(5), vec![0.0, 1.0, 2.0, 4.0]);
    cfg.n_grid = vec![10, 20, 40];
    cfg.trials = 3;
    cfg.seed = 17;
    let one = run_convergence_sweep(&cfg, RunOptions { jobs: Some(1), timing: false }).unwrap();
    let three = run_convergence_sweep(&cfg, RunOptions { jobs: Some(3), timing: false }).unwrap();
    assert_eq!(one.rows.len(), 4 * 3 * 3);
    assert_eq!(one.to_csv(), three.to_csv());
    assert!(one.failures.is_empty());
    assert_eq!(one.config_hash, cfg.hash());
    let keys: Vec<(u64, usize, usize)> = one.rows.iter().map(|r| (r.sigma.to_bits(), r.n, r.trial)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| f64::from_bits(a.0).total_cmp(&f64::from_bits(b.0)).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    assert_eq!(keys, sorted);
    assert!(one.rows.iter().all(|r| r.estimate >= 0.0 && r.elapsed_ms == 0));
}

#[test]
fn csv_round_trip_and_schema_errors() {
    let mut cfg = SweepConfig::new(SourceSpec::gaussian(2, 1.0), vec![0.5, 1.5]);
    cfg.n_grid = vec![8, 16];
    cfg.trials = 2;
    let table = run_convergence_sweep(&cfg, RunOptions::default()).unwrap();
    let csv = table.to_csv();
    assert!(csv.starts_with("d,sigma,n,m,trial,estimate,elapsed_ms\n"));
    assert!(!csv.contains('\r'));
    let back = ResultTable::from_csv(&csv).unwrap();
    assert_eq!(back.rows, table.rows);
    assert!(ResultTable::from_csv("d,sigma,n,m,trial,value,elapsed_ms\n").unwrap_err().to_string().contains("value"));
    let bad_row = "d,sigma,n,m,trial,estimate,elapsed_ms\n2,0.5,8,8,0,abc,0\n";
    assert!(ResultTable::from_csv(bad_row).unwrap_err().to_string().contains("row 2"));
}

#[test]
fn fixed_m_rule_uses_m() {
    let mut cfg = SweepConfig::new(SourceSpec::uniform_cube(2), vec![1.0]);
    cfg.n_grid = vec![5, 10];
    cfg.m_rule = MRule::Fixed(30);
    cfg.trials = 2;
    let table = run_convergence_sweep(&cfg, RunOptions::default()).unwrap();
    assert!(table.rows.iter().all(|r| r.m == 30));
}

#[test]
fn sigma_sweep_on_dirac_pair() {
    let cfg = SigmaSweepConfig {
        source: SourceSpec::dirac_pair(vec![0.0, 0.0], vec![1.0, 0.0]),
        other: None,
        noise: NoiseFamily::Gaussian,
        sigma_grid: vec![0.0, 0.5, 1.0],
        m: 200,
        trials: 4,
        seed: 3,
        crn: true,
    };
    let table = run_sigma_sweep(&cfg, RunOptions::default()).unwrap();
    let cells = summarize(&table);
    assert_eq!(cells.len(), 3);
    assert!((cells[0].mean - 1.0).abs() < 1e-12);
    assert!(cells.iter().all(|c| c.mean >= 1.0 - 1e-9));
}

#[test]
fn sigma_ordering_on_synthetic_table() {
    let mut rows = Vec::new();
    for (s, base) in [(0.0, 1.0), (1.0, 0.8), (2.0, 0.85)] {
        for t in 0..4 {
            rows.push(ResultRow { d: 1, sigma: s, n: 10, m: 10, trial: t, estimate: base + 0.001 * t as f64, elapsed_ms: 0 });
        }
    }
    let table = ResultTable { rows, ..Default::default() };
    let checks = check_sigma_ordering(&table, 0.0);
    assert_eq!(checks.len(), 2);
    assert!(checks[0].ok);
    assert!(!checks[1].ok);
    assert!(check_sigma_ordering(&table, 0.1).iter().all(|c| c.ok));
}

#[test]
fn plan_convergence_envelope() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mk = |rng: &mut ChaCha8Rng| {
        make_empirical(PointCloud::new(2, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).unwrap()
    };
    let mu = mk(&mut rng);
    let nu = mk(&mut rng);
    let mut sigmas: Vec<f64> = (0..=6).map(|k| 0.5f64.powi(k)).collect();
    sigmas.push(0.0);
    let rep = run_plan_convergence(&mu, &nu, NoiseFamily::Gaussian, &sigmas, 10, 5).unwrap();
    for r in &rep.rows {
        assert!(r.ok, "{r:?}");
    }
    let last = rep.rows.last().unwrap();
    assert!((last.mean - rep.exact).abs() < 1e-12 && last.std_err < 1e-12);
    assert!((last.plan_cost - rep.exact).abs() < 1e-12);
    for w in rep.rows.windows(2) {
        if w[1].sigma > 0.0 {
            let width = |r: &got_core::experiments::PlanConvergenceRow| 2.0 * 2f64.sqrt() * r.sigma;
            assert!((width(&w[0]) / width(&w[1]) - 2.0).abs() < 1e-12);
        }
    }
    assert!(run_plan_convergence(&mu, &nu, NoiseFamily::Uniform, &sigmas, 10, 5).is_err());
}

#[test]
fn dirac_triple_is_tight() {
    let d = |x: f64| MeasureInput::Measure(DiscreteMeasure::dirac(&[x, 0.0, 0.0]).unwrap());
    let g = NoiseModel::gaussian(1.0, 3).unwrap();
    let c = check_triangle(&d(0.0), &d(1.0), &d(3.0), &g, 300, 10, SeedTuple::new(9)).unwrap();
    assert!(c.ok);
    let tol = c.slack;
    assert!((c.d_xy - 1.0).abs() <= tol);
    assert!((c.d_yz - 2.0).abs() <= tol);
    assert!((c.d_xz - 3.0).abs() <= tol);
    assert!((c.d_xy + c.d_yz - c.d_xz).abs() <= tol);
}

#[test]
fn random_triples_satisfy_axioms() {
    let cfg = AxiomConfig {
        d: 3,
        sigma: 1.0,
        noise: NoiseFamily::Gaussian,
        triples: 20,
        atoms: 6,
        m: 200,
        m_small: 50,
        trials: 5,
        seed: 11,
    };
    let rep = run_metric_axioms(&cfg).unwrap();
    assert_eq!(rep.triangle_violations, 0);
    assert_eq!(rep.symmetry_max_diff, 0.0);
    assert!(rep.self_distance_decreases);
    assert!(rep.passed());
}
