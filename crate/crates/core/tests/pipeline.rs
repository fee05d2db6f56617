use std::fs;

use tempfile::TempDir;
use warmstart_qp::datagen::mpc::{mpc_dataset, PendulumSpec};
use warmstart_qp::datagen::{read_dataset, read_meta, synthetic_dataset, write_dataset, DatasetMeta, SplitBounds, SyntheticSpec};
use warmstart_qp::eval::{compare_cold_warm, evaluate_checkpoint, write_bench};
use warmstart_qp::nn::{split_ranges, train_checkpoint, Checkpoint, LabeledQp, ModelKind, TrainConfig};
use warmstart_qp::SolverOptions;

fn small_dataset(seed: u64, count: usize) -> Vec<LabeledQp> {
    let spec = SyntheticSpec { n: 4, m: 10, p: 2, bandwidth: None, seed };
    synthetic_dataset(&spec, count).unwrap().0
}

#[test]
fn dataset_round_trips_through_jsonl() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("nested/data.jsonl");
    let data = small_dataset(1, 30);
    let meta = DatasetMeta {
        generator: "synthetic".into(),
        spec: serde_json::json!({"n": 4, "m": 10, "p": 2}),
        seed: 1,
        count: data.len(),
        rejected: 0,
        split: SplitBounds::for_len(data.len()),
    };
    write_dataset(&path, &data, &meta).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.qp, b.qp);
        assert_eq!(a.active_set, b.active_set);
    }
    assert_eq!(read_meta(&path).unwrap(), Some(meta));
    assert!(!tmp.path().join("nested/data.jsonl.tmp").exists());
}

#[test]
fn unlabeled_records_are_not_a_dataset() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("d.jsonl");
    fs::write(&path, r#"{"n":1,"m":1,"H":[[1]],"A":[[1]],"f":[0],"b":[1]}"#).unwrap();
    let err = read_dataset(&path).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn labels_are_optimal_active_sets() {
    for d in small_dataset(2, 20) {
        let truth = warmstart_qp::qp::kkt_oracle(&d.qp).unwrap();
        let mut expected = truth.active_set.clone();
        expected.sort_unstable();
        assert_eq!(d.active_set, expected);
    }
}

#[test]
fn trained_checkpoint_survives_save_and_load() {
    let data = small_dataset(3, 200);
    let (tr, va, te) = split_ranges(data.len());
    let cfg = TrainConfig { max_epochs: 4, seed: 1, ..TrainConfig::default() };
    let tmp = TempDir::new().unwrap();
    for kind in [ModelKind::Gnn, ModelKind::Mlp] {
        let ck = train_checkpoint(kind, &data[tr.clone()], &data[va.clone()], &cfg).unwrap();
        assert!((0.0..=1.0).contains(&ck.threshold));
        assert!(!ck.history.is_empty() && ck.history.len() <= 4);
        let path = tmp.path().join(format!("{kind:?}.json"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.kind(), kind);
        let a = ck.model.dataset_probs(&data[te.clone()]).unwrap();
        let b = back.model.dataset_probs(&data[te.clone()]).unwrap();
        assert_eq!(a, b);
        let report = evaluate_checkpoint(&back, &data[te.clone()]).unwrap();
        assert!((0.0..=100.0).contains(&report.accuracy));
    }
}

#[test]
fn mlp_checkpoint_refuses_other_sizes() {
    let data = small_dataset(4, 60);
    let (tr, va, _) = split_ranges(data.len());
    let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
    let ck = train_checkpoint(ModelKind::Mlp, &data[tr], &data[va], &cfg).unwrap();
    let other = SyntheticSpec { n: 5, m: 10, p: 2, bandwidth: None, seed: 0 };
    let (bigger, _) = synthetic_dataset(&other, 1).unwrap();
    assert!(ck.model.constraint_probs(&bigger[0].qp).is_err());
}

#[test]
fn bench_files_are_written() {
    let data = small_dataset(5, 120);
    let (tr, va, te) = split_ranges(data.len());
    let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
    let ck = train_checkpoint(ModelKind::Gnn, &data[tr], &data[va], &cfg).unwrap();
    let outcome = compare_cold_warm(&data[te.clone()], &ck, &SolverOptions::default()).unwrap();
    assert_eq!(outcome.records.len() + outcome.failures.len(), te.len());
    let tmp = TempDir::new().unwrap();
    write_bench(tmp.path(), &outcome).unwrap();
    let bench = fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), outcome.records.len() + 1);
    for file in ["percentiles.csv", "histogram.csv"] {
        assert!(tmp.path().join(file).is_file());
    }
}

#[test]
fn pendulum_dataset_is_labeled_and_reproducible() {
    let spec = PendulumSpec { np: 12, nc: 3, seed: 6, ..PendulumSpec::default() }.to_mpc().unwrap();
    let (a, rejected) = mpc_dataset(&spec, 15, 1500).unwrap();
    let (b, _) = mpc_dataset(&spec, 15, 1500).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 15);
    assert!(rejected.rejected.iter().all(|(_, why)| !why.is_empty()));
    assert!(a.iter().all(|d| d.qp.n() == 3));
}
