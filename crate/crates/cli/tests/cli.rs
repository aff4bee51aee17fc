use std::path::Path;
use std::process::{Command, Output};

fn run_in(dir: &Path, args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_got"));
    cmd.args(args).current_dir(dir).env_remove("GOT_SEED");
    if let Some(s) = seed_env {
        cmd.env("GOT_SEED", s);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn leading_number(s: &str) -> f64 {
    s.split_whitespace().next().unwrap().parse().unwrap()
}

const SWEEP: &str = "sigma_grid = [0.5, 1.0, 2.0]\nn_grid = [10, 20, 40, 80]\ntrials = 3\nseed = 4\n\n[source]\nfamily = \"uniform-cube\"\nd = 2\n";

#[test]
fn dirac_estimate_is_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "estimate", "--source", "dirac-pair", "--x", "0", "--y", "1", "--d", "1", "--sigma", "1", "--n", "1", "--m", "500",
        "--trials", "10", "--seed", "7",
    ];
    let o = run_in(dir.path(), &args, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mean = leading_number(&stdout(&o));
    assert!((mean - 1.0).abs() < 0.1, "{mean}");
}

#[test]
fn negative_sigma_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["estimate", "--source", "uniform-cube", "--d", "2", "--sigma", "-1", "--n", "10"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"));
}

#[test]
fn malformed_flags_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["estimate", "--sigma", "1", "--n", "10"][..],
        &["estimate", "--source", "nowhere", "--d", "2", "--sigma", "1", "--n", "10"],
        &["estimate", "--source", "dirac-pair", "--x", "0,1", "--y", "1", "--d", "3", "--sigma", "1", "--n", "1"],
        &["bounds", "--sigma", "1", "--d", "5", "--k", "0.5"],
        &["sinkhorn-compare", "--source", "gaussian", "--d", "2", "--epsilon", "1", "--epsilon-relative", "0.1"],
        &["no-such-command"],
    ] {
        let o = run_in(dir.path(), args, None);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn uniform_cube_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "estimate", "--source", "uniform-cube", "--d", "5", "--sigma", "0", "--n", "100", "--m", "100", "--trials", "5",
        "--seed", "1",
    ];
    let o = run_in(dir.path(), &args, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mean = leading_number(&stdout(&o));
    assert!(mean.is_finite() && mean > 0.0);
    assert!(dir.path().join("got-estimate.manifest.json").exists());
}

#[test]
fn bounds_table_lists_rate_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["bounds", "--sigma", "1", "--d", "5", "--k", "0.5", "--n", "1000", "--out", "b.csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let rate: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rate_bound,"))
        .expect("rate_bound row")
        .parse()
        .unwrap();
    // √10 · 1.5^3.5 · e^(15/16) / √1000 with c1 = 1 for gaussian noise
    let expect = 10f64.sqrt() * 1.5f64.powf(3.5) * (15.0f64 / 16.0).exp() / 1000f64.sqrt();
    assert!((rate - expect).abs() <= 1e-12 * expect, "{rate} vs {expect}");
    assert!(stdout(&o).contains("rate_bound"));
}

#[test]
fn sweep_then_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("sweep.toml"), SWEEP).unwrap();
    let o = run_in(p, &["convergence", "--config", "sweep.toml", "--out", "table.csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run_in(p, &["plot", "--in", "table.csv", "--out", "fig.svg", "--title", "a < b"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = std::fs::read_to_string(p.join("fig.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches("<!-- data:").count(), 12);
    assert!(svg.contains("a &lt; b"));
    assert!(p.join("fig.svg.manifest.json").exists());
}

#[test]
fn plot_rejects_schema_violations() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("cols.csv"), "d,sigma,n,m,trial,value,elapsed_ms\n1,1,10,10,0,0.5,0\n").unwrap();
    let o = run_in(p, &["plot", "--in", "cols.csv", "--out", "x.svg"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("estimate"), "{}", stderr(&o));

    std::fs::write(p.join("row.csv"), "d,sigma,n,m,trial,estimate,elapsed_ms\n1,1,10,10,0,0.5,0\n1,1,10,10,1,oops,0\n").unwrap();
    let o = run_in(p, &["plot", "--in", "row.csv", "--out", "x.svg"], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("estimate") && err.contains("row"), "{err}");
    assert!(!p.join("x.svg").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = run_in(p, &["convergence", "--config", "missing.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(p.join("bad.toml"), format!("colour = 1\n{SWEEP}")).unwrap();
    let o = run_in(p, &["convergence", "--config", "bad.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    std::fs::write(p.join("nested.toml"), format!("{SWEEP}colour = 1\n")).unwrap();
    let o = run_in(p, &["convergence", "--config", "nested.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    std::fs::write(p.join("order.toml"), SWEEP.replace("[10, 20, 40, 80]", "[20, 10]")).unwrap();
    let o = run_in(p, &["convergence", "--config", "order.toml"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("sweep.toml"), SWEEP).unwrap();
    let o = run_in(p, &["convergence", "--config", "sweep.toml", "--sigma-grid", "1", "--trials", "2", "--out", "t.csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
}

fn manifest_seed(p: &Path, name: &str) -> u64 {
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join(name)).unwrap()).unwrap();
    m["seed"].as_u64().unwrap()
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("sweep.toml"), SWEEP).unwrap();
    let base = ["convergence", "--config", "sweep.toml", "--n-grid", "10,20,30,40", "--trials", "2"];
    let with = |extra: &[&str], env: Option<&str>, out: &str| {
        let mut args: Vec<&str> = base.to_vec();
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", out]);
        let o = run_in(p, &args, env);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        manifest_seed(p, &format!("{out}.manifest.json"))
    };
    assert_eq!(with(&["--seed", "99"], Some("5"), "a.csv"), 99);
    assert_eq!(with(&[], Some("5"), "b.csv"), 4);

    std::fs::write(p.join("noseed.toml"), SWEEP.replace("seed = 4\n", "")).unwrap();
    let o = run_in(p, &["convergence", "--config", "noseed.toml", "--out", "c.csv"], Some("5"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(manifest_seed(p, "c.csv.manifest.json"), 5);
    let o = run_in(p, &["convergence", "--config", "noseed.toml", "--out", "d.csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(manifest_seed(p, "d.csv.manifest.json"), 0);

    let o = run_in(p, &["convergence", "--config", "noseed.toml"], Some("minus one"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_records_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = [
        "--manifest", "run.json", "sigma-sweep", "--source", "gaussian", "--d", "2", "--sigma-grid", "0,1", "--m", "40",
        "--trials", "3", "--seed", "8", "--out", "s.csv",
    ];
    let o = run_in(p, &args, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("run.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "sigma-sweep");
    assert_eq!(m["seed"], 8);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"][0], "s.csv");
    assert!(!p.join("s.csv.manifest.json").exists());

    let before = std::fs::read(p.join("s.csv")).unwrap();
    std::fs::remove_file(p.join("s.csv")).unwrap();
    let o = run_in(p, &["replay", "run.json"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(p.join("s.csv")).unwrap(), before);
}

#[test]
fn replay_rejects_garbage_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), "{\"command\": \"teleport\"}").unwrap();
    let o = run_in(dir.path(), &["replay", "m.json"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["estimate", "--source", "gaussian", "--d", "3", "--sigma", "1", "--n", "300", "--trials", "2", "--out", "e.csv"];
    let o = run_in(p, &args, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("e.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("e.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["timing"], false);
    assert_eq!(m["config"]["m"], 1000);
}

#[test]
fn axioms_and_sinkhorn_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = run_in(p, &["axioms", "--d", "2", "--triples", "3", "--trials", "3", "--m", "80", "--m-small", "20", "--out", "ax.json"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("ax.json")).unwrap()).unwrap();
    assert_eq!(rep["triangle"].as_array().unwrap().len(), 3);

    let o = run_in(p, &["sinkhorn-compare", "--source", "uniform-cube", "--d", "2", "--n", "12", "--instances", "3", "--epsilon", "0.05", "--out", "sk.csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("sk.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[1], 0.05);
        assert!(cols[5] >= -1e-9, "entropic value below exact: {line}");
    }
}
