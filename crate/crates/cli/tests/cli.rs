use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[federation]
clients = 4
pool_size = 2
local_iters = 2
global_iters = 10
clip_threshold = 5.0
repeats = 2
[data]
per_client = 10
features = 2
"#;

fn dpfedavg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpfedavg")).args(args).output().unwrap()
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn run_in(dir: &Path, sub: &str, body: &str, extra: &[&str]) -> Output {
    let cfg = config(dir, body);
    let out = dir.join("out");
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    dpfedavg(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_reproducible_tables() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}[dp]\nmechanism = \"laplace\"\nepsilon = 20.0\n");
    let o = run_in(dir.path(), "run", &body, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean_final_loss = "));
    let rounds = std::fs::read(dir.path().join("out/rounds.csv")).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.starts_with("t,k,runs,mean_loss"));
    assert_eq!(summary.lines().count(), 11);

    let o = run_in(dir.path(), "run", &body, &["--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(rounds, std::fs::read(dir.path().join("out/rounds.csv")).unwrap());

    let o = run_in(dir.path(), "run", &body, &["--quiet", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(rounds, std::fs::read(dir.path().join("out/rounds.csv")).unwrap());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "run", &format!("{SMALL}[dp]\nepsilonn = 1.0\n"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epsilonn"), "{}", stderr(&o));
}

#[test]
fn invalid_value_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "run", &SMALL.replace("pool_size = 2", "pool_size = 3"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pool_size"), "{}", stderr(&o));
}

#[test]
fn missing_files_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpfedavg(&["run", "--config", dir.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let body = format!("{SMALL}source = \"csv\"\npath = \"missing.csv\"\n");
    let o = run_in(dir.path(), "run", &body, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn plan_reports_the_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("global_iters = 10", "global_iters = 500").replace("local_iters = 2", "local_iters = 1");
    let o = run_in(dir.path(), "plan", &format!("{body}[dp]\nmechanism = \"gaussian\"\n"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/plan.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), text);
    // Gaussian: T = 500, T^{1/2} ≈ 22.4 → nearest divisor 20 (25 is further).
    assert!(text.contains("optimal_local_iters = 20\n"), "{text}");
    assert!(text.contains("gaussian_sigma = "));
    // ε = 1 against T_l = 250 rounds per client: no composition warning.
    assert!(!text.contains("warning"));

    let o = run_in(dir.path(), "plan", &format!("{body}[dp]\nmechanism = \"gaussian\"\nepsilon = 400.0\n"), &["--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).starts_with("warning: epsilon = 400"), "{}", stderr(&o));
}

#[test]
fn validate_small_budget() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}[dp]\nmechanism = \"laplace\"\n");
    let o = run_in(dir.path(), "validate", &body, &["--draws", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(std::fs::read_to_string(dir.path().join("out/validate.txt")).unwrap().contains("result = pass"));

    let o = run_in(dir.path(), "validate", &body, &["--draws", "10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_over_local_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}[sweep]\naxis = \"E\"\nvalues = [1, 2, 5]\n");
    let o = run_in(dir.path(), "sweep", &body, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains('*'));

    let o = run_in(dir.path(), "sweep", SMALL, &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}[schedule]\nkind = \"constant\"\neta = 50.0\n");
    let body = body.replace("clip_threshold = 5.0", "clip_threshold = 1e300");
    let o = run_in(dir.path(), "run", &body, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
