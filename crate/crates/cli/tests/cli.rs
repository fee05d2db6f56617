use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_warmstart-qp");

fn run(dir: &Path, args: &[&str]) -> Output {
    run_env(dir, args, &[])
}

fn run_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

const FIG2: &str = r#"{"n":2,"m":3,"H":[[2,1],[1,2]],"A":[[1,1],[-1,2],[-3,1]],"f":[-4,-8],"b":[3,0,10]}"#;

fn pipeline(dir: &Path, tag: &str) {
    let data = format!("data-{tag}");
    let models = format!("models-{tag}");
    ok(dir, &["generate", "--spec", "syn.json", "--count", "80", "--seeds", "1,2", "--out", &data]);
    ok(dir, &["train", "--data", &data, "--seeds", "1,2", "--max-epochs", "3", "--out", &models]);
    ok(dir, &["evaluate", "--checkpoint", &models, "--data", &data, "--seeds", "1,2", "--out", &format!("eval-{tag}")]);
    ok(dir, &["bench", "--checkpoint", &models, "--data", &data, "--seeds", "1,2", "--out", &format!("bench-{tag}")]);
}

/// Drops the timing columns of bench.csv.
fn untimed(csv: &[u8]) -> Vec<String> {
    String::from_utf8(csv.to_vec())
        .unwrap()
        .lines()
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            [c[0], c[1], c[2], c[5], c[6]].join(",")
        })
        .collect()
}

#[test]
fn repeated_pipeline_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "syn.json", r#"{"n": 4, "m": 8, "p": 2}"#);
    pipeline(dir, "a");
    pipeline(dir, "b");
    for seed in ["seed-1", "seed-2"] {
        for file in ["dataset.jsonl", "dataset.jsonl.meta.json"] {
            assert_eq!(bytes(dir.join("data-a").join(seed).join(file)), bytes(dir.join("data-b").join(seed).join(file)));
        }
        let ck = |t: &str| bytes(dir.join(format!("models-{t}")).join(seed).join("checkpoint.json"));
        assert_eq!(ck("a"), ck("b"));
        let bench = |t: &str, f: &str| bytes(dir.join(format!("bench-{t}")).join(seed).join(f));
        assert_eq!(untimed(&bench("a", "bench.csv")), untimed(&bench("b", "bench.csv")));
        assert_eq!(bench("a", "percentiles.csv"), bench("b", "percentiles.csv"));
        let summary: serde_json::Value = serde_json::from_slice(&bench("a", "summary.json")).unwrap();
        assert_eq!(summary["failures"], 0);
        assert_eq!(summary["failed_instances"], serde_json::json!([]));
    }
    for file in ["metrics.csv", "naive.csv", "table.txt"] {
        assert_eq!(bytes(dir.join("eval-a").join(file)), bytes(dir.join("eval-b").join(file)));
    }
    let metrics = fs::read_to_string(dir.join("eval-a/metrics.csv")).unwrap();
    let first: Vec<&str> = metrics.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(first, ["seed", "1", "2", "mean", "std"]);
}

#[test]
fn thread_cap_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "syn.json", r#"{"n": 3, "m": 6, "p": 2}"#);
    let args = |out: &'static str| ["generate", "--spec", "syn.json", "--count", "20", "--seeds", "4,5,6", "--out", out];
    let one = run_env(dir, &args("one"), &[("WARMSTART_QP_THREADS", "1")]);
    let three = run_env(dir, &args("three"), &[("WARMSTART_QP_THREADS", "3")]);
    assert!(one.status.success() && three.status.success());
    for s in [4, 5, 6] {
        let f = format!("seed-{s}/dataset.jsonl");
        assert_eq!(bytes(dir.join("one").join(&f)), bytes(dir.join("three").join(&f)));
    }
    let bad = run_env(dir, &args("bad"), &[("WARMSTART_QP_THREADS", "0")]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn every_output_directory_has_one_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "syn.json", r#"{"n": 3, "m": 6, "p": 1, "seed": 9}"#);
    ok(dir, &["generate", "--spec", "syn.json", "--count", "10", "--out", "d"]);
    let manifests: Vec<_> = fs::read_dir(dir.join("d"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains("manifest"))
        .collect();
    assert_eq!(manifests.len(), 1);
    let m: serde_json::Value = serde_json::from_slice(&bytes(dir.join("d/manifest.json"))).unwrap();
    assert_eq!(m["command"], "generate");
    assert_eq!(m["seeds"], serde_json::json!([9]));
    assert_eq!(m["config"]["count"], 10);
    assert!(m["finished_unix_s"].is_number());
    let lines = fs::read_to_string(dir.join("d/dataset.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
}

#[test]
fn flag_seed_overrides_spec_seed() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "a.json", r#"{"n": 3, "m": 6, "p": 2, "seed": 5}"#);
    write(dir, "b.json", r#"{"n": 3, "m": 6, "p": 2, "seed": 0}"#);
    ok(dir, &["generate", "--spec", "a.json", "--count", "5", "--out", "a"]);
    ok(dir, &["generate", "--spec", "b.json", "--count", "5", "--seed", "5", "--out", "b"]);
    assert_eq!(bytes(dir.join("a/dataset.jsonl")), bytes(dir.join("b/dataset.jsonl")));
}

#[test]
fn solve_small_example() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "fig2.json", FIG2);
    let cold: serde_json::Value = serde_json::from_str(&ok(dir, &["solve", "--qp", "fig2.json"])).unwrap();
    let x: Vec<f64> = serde_json::from_value(cold["x"].clone()).unwrap();
    assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    assert_eq!(cold["active_set"], serde_json::json!([0, 1]));
    assert_eq!(cold["status"], "optimal");
    assert_eq!(cold["warm_set_size"], 0);

    ok(dir, &["solve", "--qp", "fig2.json", "--warm-set", "0,1", "--out", "sol.json"]);
    let warm: serde_json::Value = serde_json::from_slice(&bytes(dir.join("sol.json"))).unwrap();
    assert_eq!(warm["iterations"], 1);
    assert_eq!(warm["warm_set_size"], 2);
}

#[test]
fn mpc_generate_pendulum() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "pend.json", r#"{"pendulum": {"Np": 10, "Nc": 3}}"#);
    let out = ok(dir, &["mpc-generate", "--spec", "pend.json", "--count", "6", "--seed", "2", "--out", "m"]);
    assert!(out.contains("n = 3"), "{out}");
    let first = fs::read_to_string(dir.join("m/dataset.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(rec["n"], 3);
    assert!(rec["active_set"].is_array());
}

#[test]
fn threshold_override_changes_predictions() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "syn.json", r#"{"n": 3, "m": 6, "p": 2, "seed": 3}"#);
    ok(dir, &["generate", "--spec", "syn.json", "--count", "40", "--out", "d"]);
    ok(dir, &["train", "--data", "d", "--max-epochs", "2", "--out", "m"]);
    let predicted_active = |extra: &[&str], out: &str| -> usize {
        let mut args = vec!["evaluate", "--checkpoint", "m", "--data", "d", "--split", "all", "--out", out];
        args.extend_from_slice(extra);
        ok(dir, &args);
        let metrics = fs::read_to_string(dir.join(out).join("metrics.csv")).unwrap();
        let row: Vec<usize> = metrics.lines().nth(1).unwrap().split(',').skip(5).map(|v| v.parse().unwrap()).collect();
        row[0] + row[1]
    };
    let everything = predicted_active(&["--threshold-override", "0"], "e0");
    let default = predicted_active(&[], "e");
    let strict = predicted_active(&["--threshold-override", "1"], "e1");
    assert_eq!(everything, 40 * 6);
    assert!(strict <= default && default <= everything);
    let m: serde_json::Value = serde_json::from_slice(&bytes(dir.join("e1/manifest.json"))).unwrap();
    assert_eq!(m["config"]["threshold_override"], 1.0);
    let bad = run(dir, &["evaluate", "--checkpoint", "m", "--data", "d", "--threshold-override", "1.5", "--out", "e"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "bad.json", r#"{"n": 0, "m": 4, "p": 1}"#);
    write(dir, "broken.json", r#"{"n": 2, "m": "#);
    write(dir, "fig2.json", FIG2);

    assert_eq!(run(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(run(dir, &["generate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(dir, &["frobnicate"]).status.code(), Some(1));

    let missing = run(dir, &["generate", "--spec", "nope.json", "--count", "3", "--out", "o"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--spec"));

    let invalid = run(dir, &["generate", "--spec", "bad.json", "--count", "3", "--out", "o"]);
    assert_eq!(invalid.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("`n`"));

    assert_eq!(run(dir, &["generate", "--spec", "broken.json", "--count", "3", "--out", "o"]).status.code(), Some(1));
    assert_eq!(run(dir, &["solve", "--qp", "fig2.json", "--warm-set", "7"]).status.code(), Some(1));
    assert_eq!(run(dir, &["train", "--data", "nowhere", "--out", "o"]).status.code(), Some(1));

    // An output path below a regular file cannot be created.
    write(dir, "blocker", "");
    let io = run(dir, &["solve", "--qp", "fig2.json", "--out", "blocker/sol.json"]);
    assert_eq!(io.status.code(), Some(2));
}
