use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fgcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgcl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "synthetic": {
            "n_graphs": 30, "min_nodes": 3, "max_nodes": 6, "feature_dim": 4,
            "noise_sd": 0.5, "feature_gap": 0.25, "feature_offset": 0.0
        },
        "clients": 3, "sampled": 2, "rounds": 2, "hidden": 8, "k": 2, "cap_n": 10
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_creates_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fgcl(&["run", "--config", &tiny_config(dir.path()), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "summary.json", "checkpoint.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "round,client_id,loss_c,loss_e,loss,auc_clean,auc_perturbed,eps_cumulative"
    );
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn default_config_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fgcl(&["run", "--rounds", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("summary.json").is_file());
}

#[test]
fn summary_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = tiny_config(dir.path());
    assert!(fgcl(&["run", "--config", &cfg, "--seed", "5", "--out", a.to_str().unwrap()]).status.success());
    let summary = a.join("summary.json");
    let o = fgcl(&["run", "--config", summary.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn out_of_grid_gamma_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fgcl(&[
        "run",
        "--config",
        &tiny_config(dir.path()),
        "--gamma",
        "1.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: gamma 1.5"), "{}", stderr(&o));
}

#[test]
fn negative_budget_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fgcl(&["run", "--eps0", "-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps0"), "{}", stderr(&o));
}

#[test]
fn bad_config_field_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"sampled": 9, "clients": 8}"#).unwrap();
    let o = fgcl(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sampled"));
}

#[test]
fn missing_dataset_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fgcl(&[
        "run",
        "--dataset",
        dir.path().join("nope.jsonl").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_dp_reports_json() {
    let o = fgcl(&["verify-dp", "--eps", "1", "--samples", "200000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let first = &report[0];
    assert_eq!(first["epsilon"], 1.0);
    assert!(first["max_ratio"].as_f64().unwrap() >= 1.0);
    assert_eq!(first["pass"], true);
}

#[test]
fn verify_dp_zero_budget() {
    let o = fgcl(&["verify-dp", "--eps", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_rows_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = fgcl(&[
        "sweep",
        "--config",
        &tiny_config(dir.path()),
        "--k-grid",
        "1,2,20",
        "--seeds",
        "2",
        "--rounds",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = fs::read_to_string(out.join("sweep.csv")).unwrap();
    // k = 20 is not below cap_n = 10, so both of its runs fail.
    assert_eq!(rows.lines().count(), 1 + 2 * 2);
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 1 + 2);
    assert!(out.join("runs").read_dir().unwrap().count() >= 4);
}

#[test]
fn generate_then_run_on_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let o = fgcl(&[
        "generate",
        "--out",
        data.to_str().unwrap(),
        "--n-graphs",
        "20",
        "--max-nodes",
        "5",
        "--min-nodes",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("run");
    let o = fgcl(&[
        "run",
        "--dataset",
        data.to_str().unwrap(),
        "--clients",
        "2",
        "--sampled",
        "2",
        "--rounds",
        "1",
        "--k",
        "1",
        "--encoder",
        "tag",
        "--eval-mode",
        "clean",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["encoder"], "tag");
    assert_eq!(summary["config"]["eval_mode"], "clean");
}
