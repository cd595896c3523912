//! End-to-end behavior of the gsde binary: exit codes, report shapes,
//! determinism, and config validation messages.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gsde")
}

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn run(subcommand: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(bin())
        .arg(subcommand)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

const TINY_ESTIMATE: &str = r#"{
  "model": { "dim": 1, "driver_dim": 1, "drift": ["0"], "sigma": ["1"] },
  "theta": { "kind": "singleton", "gamma": [1.0], "mu": [0.0] },
  "domain": { "kind": "interval", "a": 0.0, "b": 1.0 },
  "functional": { "phi": "0", "f": "-1", "mode": "upper" },
  "points": [[0.5]],
  "mc": { "n_paths": 500, "dt": 0.001, "seed": 3, "refinement": "bridge" }
}"#;

#[test]
fn estimate_writes_csv_with_contract_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY_ESTIMATE);
    let out = run("estimate", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x,value,std_error,n_paths,argmax_policy,censored_fraction"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("0.5,"), "row: {row}");
    assert!(row.contains(",500,"), "row: {row}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("estimate.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 3);
    assert_eq!(report["config"]["mc"]["n_paths"], 500);
    let value = report["results"][0]["value"].as_f64().unwrap();
    assert!((value - 0.25).abs() < 0.05, "value {value}");
}

#[test]
fn same_seed_is_byte_identical_and_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY_ESTIMATE);
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert_eq!(code(&run("estimate", &cfg, &a, &["--seed", "11"])), 0);
    assert_eq!(code(&run("estimate", &cfg, &b, &["--seed", "11"])), 0);
    assert_eq!(code(&run("estimate", &cfg, &c, &["--seed", "12"])), 0);

    let read = |d: &Path| fs::read(d.join("estimate.json")).unwrap();
    assert_eq!(read(&a), read(&b), "same seed must reproduce bytes");
    assert_ne!(read(&a), read(&c), "different seed must change the report");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 11, "override must be recorded");
}

#[test]
fn dimension_mismatch_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY_ESTIMATE.replace(r#""drift": ["0"]"#, r#""drift": ["0", "0"]"#);
    let cfg = write_cfg(dir.path(), &bad);
    let out = run("estimate", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.drift"), "stderr: {stderr}");
}

#[test]
fn unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY_ESTIMATE.replace(r#""n_paths": 500"#, r#""n_path": 500"#);
    let cfg = write_cfg(dir.path(), &bad);
    let out = run("estimate", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n_path"), "stderr: {stderr}");
}

#[test]
fn start_point_outside_domain_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY_ESTIMATE.replace("[[0.5]]", "[[2.0]]");
    let cfg = write_cfg(dir.path(), &bad);
    let out = run("estimate", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn all_censored_run_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY_ESTIMATE.replace(
        r#""mc": { "n_paths": 500, "dt": 0.001, "seed": 3, "refinement": "bridge" }"#,
        r#""mc": { "n_paths": 50, "dt": 0.001, "seed": 3, "refinement": "bridge", "t_max": 0.001 }"#,
    );
    let cfg = write_cfg(dir.path(), &bad);
    let out = run("estimate", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("censored"), "stderr: {stderr}");
}

#[test]
fn dominance_violation_exits_4() {
    // gamma = [[1,0],[2,1]] gives a = [[1,2],[2,5]]: the cross term
    // overwhelms the first diagonal entry on any grid.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        r#"{
  "model": { "dim": 2, "driver_dim": 2, "drift": ["0", "0"], "sigma": ["1", "0", "0", "1"] },
  "theta": { "kind": "singleton", "gamma": [1.0, 0.0, 2.0, 1.0], "mu": [0.0, 0.0] },
  "domain": { "kind": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0] },
  "functional": { "phi": "0", "f": "-1", "mode": "upper" },
  "pde": { "nodes": 11 }
}"#,
    );
    let out = run("pde", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dominan"), "stderr: {stderr}");
}

#[test]
fn failing_verification_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        r#"{
  "model": { "dim": 1, "driver_dim": 1, "drift": ["0"], "sigma": ["1"] },
  "theta": { "kind": "singleton", "gamma": [1.0], "mu": [0.0] },
  "domain": { "kind": "interval", "a": 0.0, "b": 1.0 },
  "functional": { "phi": "0", "f": "-1", "mode": "upper" },
  "points": [[0.5]],
  "mc": { "n_paths": 400, "dt": 0.001, "seed": 3 },
  "verify": { "checks": [ { "kind": "continuity", "points": [[0.2], [0.8]], "tolerance": 1e-9 } ] }
}"#,
    );
    let out = run("verify", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 5, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap())
            .unwrap();
    assert_eq!(report["all_pass"], false);
    assert_eq!(report["checks"][0]["pass"], false);
}

#[test]
fn empty_check_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        &TINY_ESTIMATE.replace(
            r#""points": [[0.5]],"#,
            r#""points": [[0.5]], "verify": { "checks": [] },"#,
        ),
    );
    let out = run("verify", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn degenerate_volatility_bounds_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        &TINY_ESTIMATE.replace(r#""gamma": [1.0]"#, r#""gamma": [0.0]"#),
    );
    let out = run("bounds", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pde_csv_lists_every_node_in_one_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        &TINY_ESTIMATE.replace(r#""points": [[0.5]],"#, r#""points": [[0.5]], "pde": { "nodes": 101 },"#),
    );
    let out = run("pde", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("pde.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 102, "header plus one row per node");
    assert_eq!(lines[0], "x,value");
    // Interior values solve 1/2 u'' = -1: u = x(1-x).
    let mid: Vec<&str> = lines[51].split(',').collect();
    let x: f64 = mid[0].parse().unwrap();
    let v: f64 = mid[1].parse().unwrap();
    assert!((x - 0.5).abs() < 1e-12 && (v - 0.25).abs() < 1e-8, "{x} {v}");
}

#[test]
fn normalized_config_is_a_fixed_point() {
    // Round-trip through the report: the embedded config, run again,
    // must embed itself verbatim.
    let dir = tempfile::tempdir().unwrap();
    let messy = TINY_ESTIMATE.replace(r#""f": "-1""#, r#""f": "0 - (2 - 1)""#);
    let cfg = write_cfg(dir.path(), &messy);
    let first = dir.path().join("first");
    assert_eq!(code(&run("estimate", &cfg, &first, &[])), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("estimate.json")).unwrap()).unwrap();
    let normalized = serde_json::to_string_pretty(&report["config"]).unwrap();

    let cfg2 = dir.path().join("normalized.json");
    fs::write(&cfg2, &normalized).unwrap();
    let second = dir.path().join("second");
    assert_eq!(code(&run("estimate", &cfg2, &second, &[])), 0);
    let report2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(second.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(
        report["config"], report2["config"],
        "normalization must be idempotent"
    );
    assert_eq!(report["results"], report2["results"]);
}

#[test]
fn shipped_example_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        seen += 1;
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v.get("model").is_some(), "{}: missing model", path.display());
    }
    assert!(seen >= 5, "expected the shipped examples, found {seen}");
}
