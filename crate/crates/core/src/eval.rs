//! Classification metrics, cold-vs-warm solver comparison and percentile summaries.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{synthetic_dataset, write_atomic, LabeledQp, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::train::{confusion, threshold_set};
use crate::nn::{split_ranges, train_checkpoint, Checkpoint, ModelKind, TrainConfig};
use crate::qp::{QuadraticProgram, SolveStatus};
use crate::solver::{solve_cold, solve_warm, SolverOptions};

pub const TABLE_PERCENTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        round2(100.0 * num as f64 / den as f64)
    }
}

/// Percentages over constraint nodes, rounded to two decimals. Undefined ratios are 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub seed: Option<u64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn classification_metrics(probs: &[f64], labels: &[f64], threshold: f64) -> ClassificationReport {
    assert_eq!(probs.len(), labels.len(), "one probability per label");
    let (tp, fp, fn_, tn) = confusion(probs, labels, threshold);
    ClassificationReport {
        seed: None,
        accuracy: pct(tp + tn, tp + fp + fn_ + tn),
        precision: pct(tp, tp + fp),
        recall: pct(tp, tp + fn_),
        f1: pct(2 * tp, 2 * tp + fp + fn_),
        tp,
        fp,
        tn,
        fn_,
    }
}

/// Metrics of the predictor that calls every constraint inactive.
pub fn naive_baseline(labels: &[f64]) -> ClassificationReport {
    classification_metrics(&vec![0.0; labels.len()], labels, 0.5)
}

/// Checkpoint metrics on a labeled dataset at the checkpoint's threshold.
pub fn evaluate_checkpoint(ck: &Checkpoint, data: &[LabeledQp]) -> Result<ClassificationReport> {
    let probs: Vec<f64> = ck.model.dataset_probs(data)?.into_iter().flatten().collect();
    let labels: Vec<f64> = data.iter().flat_map(LabeledQp::labels).collect();
    Ok(classification_metrics(&probs, &labels, ck.threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation; a single value has spread 0.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

pub fn aggregate_reports(reports: &[ClassificationReport]) -> AggregateReport {
    let col = |f: fn(&ClassificationReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    AggregateReport {
        runs: reports.len(),
        accuracy: col(|r| r.accuracy),
        precision: col(|r| r.precision),
        recall: col(|r| r.recall),
        f1: col(|r| r.f1),
    }
}

impl AggregateReport {
    /// Rows of `Metric  mean ± std`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("Metric          Test\n");
        for (name, ms) in [
            ("Accuracy (%)", self.accuracy),
            ("Precision (%)", self.precision),
            ("Recall (%)", self.recall),
            ("F1-score (%)", self.f1),
        ] {
            out.push_str(&format!("{name:<15} {:.2} ± {:.1}\n", ms.mean, ms.std));
        }
        out
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets count as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|i| b.contains(i)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance_id: usize,
    pub iters_cold: usize,
    pub iters_warm: usize,
    pub time_cold_s: f64,
    pub time_warm_s: f64,
    pub warm_set_size: usize,
    pub jaccard: f64,
    #[serde(skip)]
    pub objective_gap: f64,
}

fn timed_solve(
    qp: &QuadraticProgram,
    warm: Option<&[usize]>,
    opts: &SolverOptions,
) -> Result<(crate::qp::Solution, f64)> {
    let start = Instant::now();
    let df = qp.to_dual()?;
    let sol = match warm {
        None => solve_cold(&df, opts)?,
        Some(set) => solve_warm(&df, set, opts)?,
    };
    let secs = start.elapsed().as_secs_f64();
    if sol.status != SolveStatus::Optimal {
        return Err(Error::field("status", sol.status.to_string()));
    }
    Ok((sol, secs))
}

/// Cold and warm solve of one instance; both timings cover the dual transform and the solve.
pub fn compare_instance(
    id: usize,
    qp: &QuadraticProgram,
    predicted: &[usize],
    truth: &[usize],
    opts: &SolverOptions,
) -> Result<BenchRecord> {
    let (cold, time_cold_s) = timed_solve(qp, None, opts)?;
    let (warm, time_warm_s) = timed_solve(qp, Some(predicted), opts)?;
    Ok(BenchRecord {
        instance_id: id,
        iters_cold: cold.iterations,
        iters_warm: warm.iterations,
        time_cold_s,
        time_warm_s,
        warm_set_size: predicted.len(),
        jaccard: jaccard(predicted, truth),
        objective_gap: (qp.objective(&cold.x) - qp.objective(&warm.x)).abs(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    /// `(instance, reason)` for instances left out of the records.
    pub failures: Vec<(usize, String)>,
    /// Wall time of all model predictions, kept apart from solve times.
    pub prediction_seconds: f64,
}

/// Predicts a working set per instance, then solves each instance cold and warm.
pub fn compare_cold_warm(
    data: &[LabeledQp],
    ck: &Checkpoint,
    opts: &SolverOptions,
) -> Result<BenchOutcome> {
    let start = Instant::now();
    let probs = ck.model.dataset_probs(data)?;
    let prediction_seconds = start.elapsed().as_secs_f64();
    let predicted: Vec<Vec<usize>> = probs.iter().map(|p| threshold_set(p, ck.threshold)).collect();
    Ok(compare_with_predictions(data, &predicted, opts, prediction_seconds))
}

pub fn compare_with_predictions(
    data: &[LabeledQp],
    predicted: &[Vec<usize>],
    opts: &SolverOptions,
    prediction_seconds: f64,
) -> BenchOutcome {
    let mut records = Vec::with_capacity(data.len());
    let mut failures = Vec::new();
    for (i, (d, set)) in data.iter().zip(predicted).enumerate() {
        match compare_instance(i, &d.qp, set, &d.active_set, opts) {
            Ok(r) => records.push(r),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    BenchOutcome { records, failures, prediction_seconds }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub instances: usize,
    pub failures: usize,
    pub mean_iters_cold: f64,
    pub mean_iters_warm: f64,
    pub mean_time_cold_s: f64,
    pub mean_time_warm_s: f64,
    pub mean_jaccard: f64,
}

impl BenchOutcome {
    pub fn summary(&self) -> BenchSummary {
        let mean = |f: fn(&BenchRecord) -> f64| mean_std(&self.records.iter().map(f).collect::<Vec<_>>()).mean;
        BenchSummary {
            instances: self.records.len(),
            failures: self.failures.len(),
            mean_iters_cold: mean(|r| r.iters_cold as f64),
            mean_iters_warm: mean(|r| r.iters_warm as f64),
            mean_time_cold_s: mean(|r| r.time_cold_s),
            mean_time_warm_s: mean(|r| r.time_warm_s),
            mean_jaccard: mean(|r| r.jaccard),
        }
    }
}

/// Linear interpolation between order statistics at rank `q/100 · (n − 1)`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchField {
    Iterations,
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub field: BenchField,
    pub percentiles: Vec<f64>,
    pub cold: Vec<f64>,
    pub warm: Vec<f64>,
}

pub fn percentile_summary(
    records: &[BenchRecord],
    field: BenchField,
    percentiles: &[f64],
) -> Result<PercentileTable> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (cold, warm): (Vec<f64>, Vec<f64>) = records
        .iter()
        .map(|r| match field {
            BenchField::Iterations => (r.iters_cold as f64, r.iters_warm as f64),
            BenchField::Time => (r.time_cold_s, r.time_warm_s),
        })
        .unzip();
    Ok(PercentileTable {
        field,
        percentiles: percentiles.to_vec(),
        cold: percentiles.iter().map(|&q| percentile(&cold, q)).collect(),
        warm: percentiles.iter().map(|&q| percentile(&warm, q)).collect(),
    })
}

fn trim(x: f64) -> String {
    let s = format!("{:.4}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

impl PercentileTable {
    fn label(&self) -> &'static str {
        match self.field {
            BenchField::Iterations => "Iterations",
            BenchField::Time => "Time (s)",
        }
    }

    /// Two rows, cold then warm, one column per percentile.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = self.percentiles.iter().map(|q| format!("{}%", trim(*q))).collect();
        let mut out = format!("{:<24}{}\n", "Percentiles", header.join("\t"));
        for (arm, vals) in [("cold-start", &self.cold), ("warm-start", &self.warm)] {
            let row: Vec<String> = vals.iter().map(|v| trim(*v)).collect();
            out.push_str(&format!("{:<24}{}\n", format!("{} {arm}", self.label()), row.join("\t")));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.percentiles.iter().map(|q| format!("p{}", trim(*q))));
        w.write_record(&header).map_err(csv_err)?;
        for (arm, vals) in [("cold-start", &self.cold), ("warm-start", &self.warm)] {
            let mut row = vec![format!("{} {arm}", self.label())];
            row.extend(vals.iter().map(|v| trim(*v)));
            w.write_record(&row).map_err(csv_err)?;
        }
        finish(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    finish(w)
}

pub fn bench_csv(records: &[BenchRecord]) -> Result<String> {
    to_csv(records)
}

#[derive(Serialize)]
struct MetricsRow {
    seed: String,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    tn: usize,
    #[serde(rename = "fn")]
    fn_: usize,
}

/// One row per report, plus `mean` and `std` rows when there is more than one.
pub fn metrics_csv(reports: &[ClassificationReport]) -> Result<String> {
    let mut rows: Vec<MetricsRow> = reports
        .iter()
        .map(|r| MetricsRow {
            seed: r.seed.map_or_else(String::new, |s| s.to_string()),
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            tp: r.tp,
            fp: r.fp,
            tn: r.tn,
            fn_: r.fn_,
        })
        .collect();
    if reports.len() > 1 {
        let agg = aggregate_reports(reports);
        for (name, pick) in [("mean", 0), ("std", 1)] {
            let v = |ms: MeanStd| round2(if pick == 0 { ms.mean } else { ms.std });
            rows.push(MetricsRow {
                seed: name.into(),
                accuracy: v(agg.accuracy),
                precision: v(agg.precision),
                recall: v(agg.recall),
                f1: v(agg.f1),
                tp: 0,
                fp: 0,
                tn: 0,
                fn_: 0,
            });
        }
    }
    to_csv(&rows)
}

#[derive(Serialize)]
struct LongRow {
    instance_id: usize,
    arm: &'static str,
    iterations: usize,
    time_s: f64,
}

/// Long format, one row per instance and arm, for histograms.
pub fn histogram_csv(records: &[BenchRecord]) -> Result<String> {
    let rows: Vec<LongRow> = records
        .iter()
        .flat_map(|r| {
            [
                LongRow { instance_id: r.instance_id, arm: "cold", iterations: r.iters_cold, time_s: r.time_cold_s },
                LongRow { instance_id: r.instance_id, arm: "warm", iterations: r.iters_warm, time_s: r.time_warm_s },
            ]
        })
        .collect();
    to_csv(&rows)
}

/// `bench.csv`, `percentiles.csv` and `histogram.csv` under `dir`.
pub fn write_bench(dir: &Path, outcome: &BenchOutcome) -> Result<()> {
    write_atomic(&dir.join("bench.csv"), bench_csv(&outcome.records)?.as_bytes())?;
    if !outcome.records.is_empty() {
        let table = percentile_summary(&outcome.records, BenchField::Iterations, &TABLE_PERCENTILES)?;
        write_atomic(&dir.join("percentiles.csv"), table.to_csv()?.as_bytes())?;
    }
    write_atomic(&dir.join("histogram.csv"), histogram_csv(&outcome.records)?.as_bytes())
}

/// One GNN trained on a mix of problem sizes and benchmarked on another size. Each spec is one
/// structure family (shared `H` and `A`); several seeds per size give structural variety.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSizeConfig {
    pub train_specs: Vec<SyntheticSpec>,
    pub count_per_spec: usize,
    pub test_specs: Vec<SyntheticSpec>,
    pub test_count_per_spec: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

pub struct CrossSizeOutcome {
    pub checkpoint: Checkpoint,
    pub bench: BenchOutcome,
    pub test_set: Vec<LabeledQp>,
}

/// Each training family is split 70/15/15 on its own; the train and validation parts are pooled.
/// The test families are used whole.
pub fn cross_size_experiment(cfg: &CrossSizeConfig, opts: &SolverOptions) -> Result<CrossSizeOutcome> {
    if cfg.train_specs.is_empty() || cfg.test_specs.is_empty() {
        return Err(Error::field("train_specs", "needs at least one training and one test family"));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for spec in &cfg.train_specs {
        let (data, _) = synthetic_dataset(spec, cfg.count_per_spec)?;
        let (a, b, _) = split_ranges(data.len());
        train.extend_from_slice(&data[a]);
        val.extend_from_slice(&data[b]);
    }
    let checkpoint = train_checkpoint(ModelKind::Gnn, &train, &val, &cfg.train)?;
    let mut test_set = Vec::new();
    for spec in &cfg.test_specs {
        test_set.extend(synthetic_dataset(spec, cfg.test_count_per_spec)?.0);
    }
    let bench = compare_cold_warm(&test_set, &checkpoint, opts)?;
    Ok(CrossSizeOutcome { checkpoint, bench, test_set })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::fixtures::two_by_three;

    #[test]
    fn metric_examples() {
        let r = classification_metrics(&[0.9, 0.2], &[1.0, 1.0], 0.5);
        assert_eq!((r.precision, r.recall, r.f1), (100.0, 50.0, 66.67));
        let perfect = classification_metrics(&[0.9, 0.1], &[1.0, 0.0], 0.5);
        assert_eq!((perfect.accuracy, perfect.precision, perfect.recall, perfect.f1), (100.0, 100.0, 100.0, 100.0));
        // 1704 active of 10000.
        let labels: Vec<f64> = (0..10000).map(|i| if i < 1704 { 1.0 } else { 0.0 }).collect();
        let naive = naive_baseline(&labels);
        assert_eq!((naive.accuracy, naive.recall), (82.96, 0.0));
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[7.0], 10.0), 7.0);
        assert_eq!(percentile(&[4.0, 2.0], 50.0), 3.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 90.0), 4.6);
    }

    #[test]
    fn mean_std_is_sample() {
        let ms = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((ms.mean, ms.std), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]).std, 0.0);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[], &[]), 1.0);
        assert_eq!(jaccard(&[0, 1], &[1, 2]), 1.0 / 3.0);
    }

    #[test]
    fn empty_prediction_repeats_cold_run() {
        let qp = two_by_three();
        let opts = SolverOptions::default();
        let r = compare_instance(0, &qp, &[], &[0, 1], &opts).unwrap();
        assert_eq!(r.iters_cold, r.iters_warm);
        assert_eq!(r.jaccard, 0.0);
        let exact = compare_instance(1, &qp, &[0, 1], &[0, 1], &opts).unwrap();
        assert_eq!(exact.iters_warm, 1);
        assert!(exact.objective_gap < 1e-12);
    }

    #[test]
    fn table_layout() {
        let records: Vec<BenchRecord> = (1..=4)
            .map(|i| BenchRecord {
                instance_id: i,
                iters_cold: 2 * i,
                iters_warm: i,
                time_cold_s: 0.0,
                time_warm_s: 0.0,
                warm_set_size: 0,
                jaccard: 1.0,
                objective_gap: 0.0,
            })
            .collect();
        let t = percentile_summary(&records, BenchField::Iterations, &TABLE_PERCENTILES).unwrap();
        assert_eq!(t.cold[2], 5.0);
        assert_eq!(t.warm[2], 2.5);
        let text = t.to_text();
        assert!(text.starts_with("Percentiles"));
        assert!(text.contains("Iterations cold-start"));
        let csv = t.to_csv().unwrap();
        assert_eq!(csv.lines().next().unwrap(), "row,p10,p25,p50,p75,p90");
        assert!(bench_csv(&records).unwrap().starts_with(
            "instance_id,iters_cold,iters_warm,time_cold_s,time_warm_s,warm_set_size,jaccard\n"
        ));
        assert!(percentile_summary(&[], BenchField::Time, &[50.0]).is_err());
    }

    #[test]
    fn metrics_rows() {
        let mut a = classification_metrics(&[0.9, 0.2], &[1.0, 1.0], 0.5);
        a.seed = Some(1);
        let mut b = a.clone();
        b.seed = Some(2);
        let text = metrics_csv(&[a, b]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "seed,accuracy,precision,recall,f1,tp,fp,tn,fn");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("mean,50.0,100.0,50.0,66.67"));
    }
}
