use std::path::Path;
use std::process::{Command, Output};

fn speclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const PASSING: &str = r#"
experiment = "E2"
p = 2.0
y = [1.0, 4.0]
a = [1.0]
trials = 2
grid = { dim = 1, n_points = 16, length = 8.0, boundary = "dirichlet" }
"#;

#[test]
fn list_experiments_names_all_eight() {
    let out = speclab(&["list-experiments"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, ["E1", "E2", "E3", "E4", "E5", "E6", "E7", "E8"]);
}

#[test]
fn check_cutoffs_succeeds() {
    let out = speclab(&["check-cutoffs"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("samples="));
}

#[test]
fn passing_run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.toml", PASSING);
    let csv = dir.path().join("r.csv");
    let out = speclab(&["run", "--config", &cfg, "--out", csv.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("experiment,params,measured,predicted,ratio,pass,runtime_ms\n"));
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")));

    let out = speclab(&["run", "--config", &cfg, "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), text.lines().count() - 1);
}

#[test]
fn failing_row_gives_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &PASSING.replace("a = [1.0]", "a = [0.0]").replace("[1.0, 4.0]", "[1.0, 4.0, 16.0]"));
    let out = speclab(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains(",false,"));
}

#[test]
fn errors_give_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(speclab(&["run", "--config", "/nonexistent/config.toml"]).status.code(), Some(2));
    let infeasible = write(dir.path(), "e3.toml", r#"
experiment = "E3"
p = 2.0
q = 1.5
grid = { dim = 1, n_points = 16, length = 8.0, boundary = "dirichlet" }
"#);
    let out = speclab(&["run", "--config", &infeasible]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("q > p·max"));
}
