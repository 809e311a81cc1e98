use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use doob_core::model::ModelSpec;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_doobmeyer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn model_file(dir: &TempDir, name: &str, json: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, json).unwrap();
    p
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const S2_3: &str = r#"{"kind":"binary-tree","steps":3,"process":"walk-squared"}"#;
const WALK_4: &str = r#"{"kind":"binary-tree","steps":4,"process":"walk"}"#;

/// One up-move indicator on a single coin: increasing, adapted, not
/// predictable and not natural.
const UP_MOVE: &str = r#"{"kind":"explicit","probs":[0.5,0.5],"times":[0,1],
  "partitions":[[0,0],[0,1]],"values":[[0,0],[0,1]],"increasing":true}"#;

#[test]
fn squared_walk_compensator_is_the_step_index() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", S2_3);
    let out = dir.path().join("out");
    let o = run(&["decompose", "--model", s(&m), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("compensator.csv"));
    assert_eq!(rows.len(), 4 * 8);
    for r in rows {
        let t: f64 = r[0].parse().unwrap();
        let v: f64 = r[2].parse().unwrap();
        assert!((v - 3.0 * t).abs() < 1e-12);
    }
    let inv = read_csv(&out.join("invariants.csv"));
    assert_eq!(inv.len(), 5);
    assert!(inv.iter().all(|r| r[2] == "true"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "decompose");
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["config"]["model"]["steps"], 3);
}

#[test]
fn martingale_has_zero_compensator_column() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", WALK_4);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["decompose", "--model", s(&m), "--out", s(&out)])), 0);
    assert!(read_csv(&out.join("compensator.csv")).iter().all(|r| r[2] == "0"));
}

#[test]
fn malformed_probabilities_exit_two_naming_normalization() {
    let dir = TempDir::new().unwrap();
    let m = model_file(
        &dir,
        "m.json",
        r#"{"kind":"explicit","probs":[0.5,0.4],"times":[0,1],"partitions":[[0,0],[0,1]],"values":[[0,0],[1,2]]}"#,
    );
    let o = run(&["decompose", "--model", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("normalization"), "{}", stderr(&o));
}

#[test]
fn parse_errors_report_line_and_column() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", "{\n  \"kind\": \"binary-tree\",\n  \"steps\": three\n}");
    let o = run(&["verify", "--model", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let unknown = model_file(&dir, "u.json", r#"{"kind":"binary-tree","steps":2,"process":"walk","bogus":1}"#);
    let o = run(&["verify", "--model", s(&unknown), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn non_submartingale_fails_the_check() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", r#"{"kind":"binary-tree","steps":3,"process":"walk","up_prob":0.3}"#);
    let o = run(&["decompose", "--model", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("submartingale"));
}

#[test]
fn verify_squared_walk_on_ten_steps() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", r#"{"kind":"binary-tree","steps":10,"process":"walk-squared"}"#);
    let out = dir.path().join("out");
    let o = run(&["verify", "--model", s(&m), "--out", s(&out), "--levels", "1,2,4,8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tail = read_csv(&out.join("tail.csv"));
    assert_eq!(tail.len(), 4);
    let eps: Vec<f64> = tail.iter().map(|r| r[5].parse().unwrap()).collect();
    assert_eq!(eps, vec![18.0, 16.0, 12.0, 4.0]);
    assert_eq!(read_csv(&out.join("naturality.csv")).len(), 1024);
}

#[test]
fn verify_martingale_has_zero_epsilon() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", WALK_4);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["verify", "--model", s(&m), "--out", s(&out)])), 0);
    assert!(read_csv(&out.join("tail.csv")).iter().all(|r| r[5] == "0"));
}

#[test]
fn verify_rejects_a_non_natural_increasing_process() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", UP_MOVE);
    let out = dir.path().join("out");
    let o = run(&["verify", "--model", s(&m), "--out", s(&out), "--levels", "0.5"]);
    assert_eq!(code(&o), 1);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdicts"]["process_natural"], false);
    assert_eq!(summary["verdicts"]["process_predictable"], false);
    assert_eq!(summary["verdicts"]["decomposition"], true);
}

#[test]
fn converge_depth_out_of_range() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", r#"{"kind":"recombining-lattice","process":"drift"}"#);
    let o = run(&["converge", "--model", s(&m), "--out", s(&dir.path().join("o")), "--depths", "25"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("depth"));
}

#[test]
fn converge_drift_deviations_are_zero() {
    let dir = TempDir::new().unwrap();
    let m = model_file(
        &dir,
        "m.json",
        r#"{"kind":"recombining-lattice","process":"drift","known_compensator":"identity-time"}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["converge", "--model", s(&m), "--out", s(&out), "--depths", "0..6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("study.csv"));
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[8] == "0" && r[9] == "true"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trend"], "converged (exact)");
}

#[test]
fn converge_monte_carlo_requires_a_seed() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", r#"{"kind":"mc-poisson","rate":1.0}"#);
    let o = run(&["converge", "--model", s(&m), "--out", s(&dir.path().join("o")), "--depths", "2..3", "--paths", "1000"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn converge_small_monte_carlo_study() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", r#"{"kind":"mc-poisson","rate":2.0,"known_compensator":{"linear":2.0}}"#);
    let out = dir.path().join("out");
    let o = run(&[
        "converge", "--model", s(&m), "--out", s(&out), "--depths", "2..4", "--paths", "20000", "--seed", "5",
        "--estimator", "regression:2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("compensator.csv"));
    assert_eq!(rows.len(), 5 + 9 + 17);
}

#[test]
fn audit_table_and_bounds() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", S2_3);
    let out = dir.path().join("out");
    let o = run(&["audit", "--model", s(&m), "--out", s(&out), "--trials", "1000", "--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = read_csv(&out.join("contingency.csv"));
    assert_eq!(t[1][2], "0");
    assert_eq!(t[2][2], "0");
    let total: usize = t.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 1000);

    let out0 = dir.path().join("out0");
    let o = run(&["audit", "--model", s(&m), "--out", s(&out0), "--trials", "0", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    assert!(read_csv(&out0.join("contingency.csv")).iter().all(|r| r[2] == "0"));

    let big = model_file(&dir, "big.json", r#"{"kind":"binary-tree","steps":7,"process":"walk"}"#);
    let o = run(&["audit", "--model", s(&big), "--out", s(&dir.path().join("o")), "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("64"), "{}", stderr(&o));

    let o = run(&["audit", "--model", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2, "seed is required");
}

#[test]
fn dump_model_round_trips() {
    let dir = TempDir::new().unwrap();
    let models = [
        S2_3,
        UP_MOVE,
        r#"{"kind":"binary-tree","steps":5,"process":"abs-walk","up_prob":0.1234567890123,"scaling":"diffusive"}"#,
        r#"{"kind":"poisson-lattice","rate":0.7,"known_compensator":{"linear":0.7}}"#,
        r#"{"kind":"mc-markov","x0":0.1,"drift":[0.3,-0.2],"vol":[1e-3,0.30000000000000004]}"#,
        r#"{"kind":"explicit","probs":[0.1,0.2,0.7],"times":[0,0.3333333333333333,1],
            "partitions":[[0,0,0],[0,0,1],[0,1,2]],"values":[[1,1,1],[1,1,2],[0.1,2.5,3]]}"#,
    ];
    for (i, text) in models.iter().enumerate() {
        let m = model_file(&dir, &format!("m{i}.json"), text);
        let d1 = dir.path().join(format!("d{i}a.json"));
        assert_eq!(code(&run(&["dump-model", "--model", s(&m), "--out", s(&d1)])), 0);
        let d2 = dir.path().join(format!("d{i}b.json"));
        assert_eq!(code(&run(&["dump-model", "--model", s(&d1), "--out", s(&d2)])), 0);
        let original = ModelSpec::from_json(text).unwrap();
        let dumped = ModelSpec::from_json(&fs::read_to_string(&d1).unwrap()).unwrap();
        assert_eq!(original, dumped);
        assert_eq!(fs::read(&d1).unwrap(), fs::read(&d2).unwrap());
    }
    let o = run(&["dump-model", "--model", s(&model_file(&dir, "x.json", S2_3))]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("walk-squared"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["decompose"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["converge", "--model", "x", "--out", "y", "--depths", "1..2", "--estimator", "kernel"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["decompose", "--model", "/nonexistent.json", "--out", "/tmp/x"])), 2);
}
