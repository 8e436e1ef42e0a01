use std::path::Path;
use std::process::{Command, Output};

fn multiq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multiq"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = multiq(dir.path(), &["gen", "--classes", "3", "--points", "120", "--seed", "4", "-o", "d.csv"]);
    assert!(out.status.success());
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"dataset": {"type": "csv", "path": "d.csv", "label_column": "label", "holdout": 40},
            "engine": {"budget": 4, "seed": 2,
                       "kinds": [{"family": "class", "group_size": 1, "cost": 1},
                                 {"family": "any", "group_size": 2, "cost": 0.25}]}}"#,
    )
    .unwrap();
    dir
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn run_writes_metrics_and_log() {
    let dir = setup();
    let out = multiq(dir.path(), &["run", "--config", "c.json", "--metrics", "out/m.csv", "--log", "out/r.jsonl"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/m.csv"));
    assert_eq!(header.join(","), "budget,accuracy,sum_cross_entropy,kind,entropy,level_s");
    assert!(!rows.is_empty());
    let log = std::fs::read_to_string(dir.path().join("out/r.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["config"]["budget"], 4.0);
}

#[test]
fn overrides_reach_the_engine() {
    let dir = setup();
    let out = multiq(
        dir.path(),
        &["run", "-c", "c.json", "--strategy", "random", "--budget", "3", "--rho", "0.3", "--seed", "11"],
    );
    assert_eq!(out.status.code(), Some(0));
    let log = std::fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    let cfg: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(cfg["config"]["strategy"], "random");
    assert_eq!(cfg["config"]["budget"], 3.0);
    assert_eq!(cfg["config"]["schedule"]["rho"], 0.3);
    assert_eq!(cfg["config"]["seed"], 11);
}

#[test]
fn usage_errors_exit_1_with_a_message() {
    let dir = setup();
    for args in [
        vec!["run", "-c", "c.json", "--frobnicate"],
        vec!["launch"],
        vec!["run", "-c", "absent.json"],
        vec!["run", "-c", "c.json", "--strategy", "greedy"],
        vec!["run", "-c", "c.json", "--budget", "-2"],
    ] {
        let out = multiq(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
    std::fs::write(dir.path().join("bad.json"), r#"{"dataset": {"type": "blobs"}, "engine": {"budgett": 1}}"#).unwrap();
    let out = multiq(dir.path(), &["run", "-c", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = setup();
    std::fs::write(
        dir.path().join("gone.json"),
        r#"{"dataset": {"type": "csv", "path": "nowhere.csv", "label_column": "label"}}"#,
    )
    .unwrap();
    let out = multiq(dir.path(), &["run", "-c", "gone.json"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Curve value at `b`: last row with budget ≤ b.
fn value_at(rows: &[Vec<String>], b: f64, col: usize) -> f64 {
    rows.iter()
        .filter(|r| r[0].parse::<f64>().unwrap() <= b + 1e-9)
        .last()
        .unwrap()[col]
        .parse()
        .unwrap()
}

#[test]
fn sweep_aggregate_matches_per_run_files() {
    let dir = setup();
    let out = multiq(dir.path(), &["sweep", "-c", "c.json", "--repeats", "5", "--workers", "2", "--out", "sw"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<_> = (0..5).map(|r| read_csv(&dir.path().join(format!("sw/run_{r:03}.csv"))).1).collect();
    let (header, agg) = read_csv(&dir.path().join("sw/aggregate.csv"));
    assert_eq!(header[..4], ["budget", "runs", "accuracy_mean", "accuracy_stderr"]);
    assert_eq!(agg.len(), 5);
    for row in &agg {
        let b: f64 = row[0].parse().unwrap();
        for (col, mean_col) in [(1usize, 2usize), (2, 4)] {
            let xs: Vec<f64> = runs.iter().map(|r| value_at(r, b, col)).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
            let got_mean: f64 = row[mean_col].parse().unwrap();
            let got_se: f64 = row[mean_col + 1].parse().unwrap();
            assert!((got_mean - mean).abs() <= 1e-12 * mean.abs().max(1.0), "b={b}");
            assert!((got_se - sd / n.sqrt()).abs() <= 1e-12 * mean.abs().max(1.0), "b={b}");
        }
    }
}

#[test]
fn theory_check_exit_reflects_the_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = multiq(dir.path(), &["theory-check"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let decisive_fail = text
        .lines()
        .any(|l| l.starts_with("FAIL") && !l.contains("(informational)"));
    assert!(text.lines().count() >= 6);
    let expected = if decisive_fail { 2 } else { 0 };
    assert_eq!(out.status.code(), Some(expected), "{text}");
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = multiq(dir.path(), &["gen", "--classes", "4", "--points", "30", "--dim", "3", "--seed", "9", "-o", name]);
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let bad = multiq(dir.path(), &["gen", "--classes", "1", "-o", "c.csv"]);
    assert_eq!(bad.status.code(), Some(1));
}
