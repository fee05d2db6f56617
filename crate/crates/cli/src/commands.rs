use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use warmstart_qp::datagen::mpc::{mpc_dataset, MpcSpecFile};
use warmstart_qp::datagen::{self, DatasetMeta, LabeledQp, SplitBounds, SyntheticSpec};
use warmstart_qp::eval::{self, BenchField, ClassificationReport, TABLE_PERCENTILES};
use warmstart_qp::nn::{train_checkpoint, Checkpoint, ModelKind, TrainConfig};
use warmstart_qp::solver::{solve_warm, SolveStats, SolverOptions, WorkingSet};
use warmstart_qp::{Error, QpRecord, SolveStatus};

use crate::manifest::RunManifest;
use crate::paths::{parallel_map, resolve_input, seed_dir, thread_cap, CHECKPOINT_FILE, DATASET_FILE};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, spec files or input data. Exit status 1.
    Invalid(String),
    /// Failures while computing or writing results. Exit status 2.
    Runtime(String),
}

impl CliError {
    pub fn invalid(msg: impl fmt::Display) -> Self {
        CliError::Invalid(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

/// Library errors prefixed with `ctx`. Numerical and I/O failures are runtime errors; the rest
/// come from bad input.
fn lib_err(ctx: impl fmt::Display) -> impl Fn(Error) -> CliError {
    move |e| match e {
        Error::Io(_)
        | Error::Infeasible
        | Error::Singular { .. }
        | Error::EmptyBlockingSet
        | Error::EnumerationLimit { .. } => CliError::runtime(format!("{ctx}: {e}")),
        _ => CliError::invalid(format!("{ctx}: {e}")),
    }
}

const AFTER_HELP: &str = "\
Settings resolve as flag > spec file > built-in default.
A seed sweep (--seeds 1,2,3) runs once per seed and writes each run to <out>/seed-<s>/; \
directory inputs are searched the same way.
WARMSTART_QP_THREADS caps the worker threads used for sweeps.
Exit status: 0 success, 1 invalid flags, specs or inputs, 2 runtime failure.";

#[derive(Debug, Parser)]
#[command(name = "warmstart-qp", version, about = "Warm-started dual active-set QP solving", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Labeled dataset from a synthetic parametric QP family.
    Generate(GenerateArgs),
    /// Labeled dataset of condensed MPC problems.
    MpcGenerate(MpcGenerateArgs),
    /// Train a GNN or MLP checkpoint on a dataset's train and validation splits.
    Train(TrainArgs),
    /// Classification metrics of checkpoints on a dataset split.
    Evaluate(EvaluateArgs),
    /// Cold versus warm-started solves on a dataset split.
    Bench(BenchArgs),
    /// Solve one QP.
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Seed of a single run; overrides the spec file.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed sweep.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

/// One entry per run; `true` when runs go to per-seed directories.
fn sweep(seed: Option<u64>, seeds: &Option<Vec<u64>>) -> Result<(Vec<Option<u64>>, bool), CliError> {
    match seeds {
        Some(list) => {
            if list.is_empty() {
                return Err(CliError::invalid("--seeds: empty list"));
            }
            if list.iter().collect::<BTreeSet<_>>().len() != list.len() {
                return Err(CliError::invalid("--seeds: duplicate seed"));
            }
            Ok((list.iter().map(|&s| Some(s)).collect(), true))
        }
        None => Ok((vec![seed], false)),
    }
}

impl SeedArgs {
    fn runs(&self) -> Result<(Vec<Option<u64>>, bool), CliError> {
        sweep(self.seed, &self.seeds)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthetic spec JSON: {"n", "m", "p", "bandwidth", "seed"}.
    #[arg(long)]
    spec: PathBuf,
    /// Instances to generate.
    #[arg(long)]
    count: usize,
    #[command(flatten)]
    seeds: SeedArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MpcGenerateArgs {
    /// MPC spec JSON: the full matrices, or {"pendulum": {...}}.
    #[arg(long)]
    spec: PathBuf,
    /// Feasible instances to keep.
    #[arg(long)]
    count: usize,
    /// Candidate parameters to try before giving up [default: 100·count].
    #[arg(long)]
    max_attempts: Option<usize>,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Gnn,
    Mlp,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gnn => ModelKind::Gnn,
            ModelArg::Mlp => ModelKind::Mlp,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file, or a directory holding dataset.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gnn")]
    model: ModelArg,
    /// Weight of the sparsity regularizer.
    #[arg(long)]
    reg_coefficient: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct ModelDataArgs {
    /// Checkpoint file, or a directory holding checkpoint.json.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file, or a directory holding dataset.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Decision threshold replacing the checkpoint's.
    #[arg(long)]
    threshold_override: Option<f64>,
    /// Seeds whose inputs live under seed-<s>/.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    io: ModelDataArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    io: ModelDataArgs,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// QP JSON: {"n", "m", "H", "A", "f", "b"}.
    #[arg(long)]
    qp: PathBuf,
    /// Comma-separated initial working set.
    #[arg(long, value_delimiter = ',')]
    warm_set: Option<Vec<usize>>,
    /// Write the solution here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::MpcGenerate(a) => mpc_generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
        Command::Solve(a) => solve_qp(a),
    }
}

fn read_json<T: DeserializeOwned>(flag: &str, path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("{flag}: {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{flag}: {}: {e}", path.display())))
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize to JSON")
}

/// Runs one job per seed on the worker pool and returns the first error, if any.
fn run_sweep<R: Send>(
    runs: &[Option<u64>],
    job: impl Fn(Option<u64>) -> Result<R, CliError> + Sync,
) -> Result<Vec<R>, CliError> {
    let threads = thread_cap()?;
    parallel_map(runs, threads, |&s| job(s)).into_iter().collect()
}

fn write_labeled(dir: &Path, data: &[LabeledQp], meta: &DatasetMeta) -> Result<(), CliError> {
    datagen::write_dataset(&dir.join(DATASET_FILE), data, meta).map_err(lib_err("--out"))
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let base: SyntheticSpec = read_json("--spec", &a.spec)?;
    if a.count == 0 {
        return Err(CliError::invalid("--count: must be at least 1"));
    }
    let (runs, is_sweep) = a.seeds.runs()?;
    let specs: Vec<SyntheticSpec> = runs
        .iter()
        .map(|s| SyntheticSpec { seed: s.unwrap_or(base.seed), ..base.clone() })
        .collect();
    for spec in &specs {
        spec.check().map_err(lib_err("--spec"))?;
    }
    let seeds: Vec<u64> = specs.iter().map(|s| s.seed).collect();
    let config = json!({ "specs": specs, "count": a.count });
    let manifest = RunManifest::begin("generate", Some(&a.spec), seeds, &a.out, config)?;
    let summaries = run_sweep(&runs, |seed| {
        let spec = SyntheticSpec { seed: seed.unwrap_or(base.seed), ..base.clone() };
        let (data, rejected) = datagen::synthetic_dataset(&spec, a.count).map_err(lib_err("generate"))?;
        let meta = DatasetMeta {
            generator: "synthetic".into(),
            spec: to_value(&spec),
            seed: spec.seed,
            count: data.len(),
            rejected: rejected.len(),
            split: SplitBounds::for_len(data.len()),
        };
        write_labeled(&seed_dir(&a.out, seed, is_sweep), &data, &meta)?;
        Ok(format!(
            "seed {}: {} instances, {} rejected, active fraction {:.4}",
            spec.seed,
            data.len(),
            rejected.len(),
            datagen::active_fraction(&data)
        ))
    })?;
    summaries.iter().for_each(|s| println!("{s}"));
    manifest.finish()
}

fn mpc_generate(a: MpcGenerateArgs) -> Result<(), CliError> {
    let file: MpcSpecFile = read_json("--spec", &a.spec)?;
    let base = file.resolve().map_err(lib_err("--spec"))?;
    base.matrices().map_err(lib_err("--spec"))?;
    if a.count == 0 {
        return Err(CliError::invalid("--count: must be at least 1"));
    }
    let max_attempts = a.max_attempts.unwrap_or(100 * a.count);
    let (runs, is_sweep) = a.seeds.runs()?;
    let seeds: Vec<u64> = runs.iter().map(|s| s.unwrap_or(base.seed)).collect();
    let config = json!({ "spec": base, "count": a.count, "max_attempts": max_attempts });
    let manifest = RunManifest::begin("mpc-generate", Some(&a.spec), seeds, &a.out, config)?;
    let summaries = run_sweep(&runs, |seed| {
        let mut spec = base.clone();
        spec.seed = seed.unwrap_or(base.seed);
        let (data, rejected) = mpc_dataset(&spec, a.count, max_attempts).map_err(lib_err("mpc-generate"))?;
        let meta = DatasetMeta {
            generator: "mpc".into(),
            spec: to_value(&spec),
            seed: spec.seed,
            count: data.len(),
            rejected: rejected.len(),
            split: SplitBounds::for_len(data.len()),
        };
        write_labeled(&seed_dir(&a.out, seed, is_sweep), &data, &meta)?;
        Ok(format!(
            "seed {}: {} instances (n = {}, m = {}), {} infeasible draws skipped",
            spec.seed,
            data.len(),
            data[0].qp.n(),
            data[0].qp.m(),
            rejected.len()
        ))
    })?;
    summaries.iter().for_each(|s| println!("{s}"));
    manifest.finish()
}

/// A dataset and its split, from the sidecar metadata when present.
fn load_split(path: &Path) -> Result<(Vec<LabeledQp>, SplitBounds), CliError> {
    let ctx = format!("--data: {}", path.display());
    let data = datagen::read_dataset(path).map_err(lib_err(&ctx))?;
    let split = match datagen::read_meta(path).map_err(lib_err(&ctx))? {
        Some(meta) => meta.split,
        None => SplitBounds::for_len(data.len()),
    };
    let ordered = split.train[0] <= split.train[1]
        && split.val[0] <= split.val[1]
        && split.test[0] <= split.test[1]
        && split.test[1] <= data.len()
        && split.val[1] <= data.len()
        && split.train[1] <= data.len();
    if !ordered {
        return Err(CliError::invalid(format!("{ctx}: split bounds exceed {} records", data.len())));
    }
    Ok((data, split))
}

fn part(data: &[LabeledQp], split: &SplitBounds, which: SplitArg) -> Vec<LabeledQp> {
    let [lo, hi] = match which {
        SplitArg::Train => split.train,
        SplitArg::Val => split.val,
        SplitArg::Test => split.test,
        SplitArg::All => [0, data.len()],
    };
    data[lo..hi].to_vec()
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut base: TrainConfig = match &a.spec {
        Some(p) => read_json("--spec", p)?,
        None => TrainConfig::default(),
    };
    if let Some(r) = a.reg_coefficient {
        base.sparsity_reg_coefficient = r;
    }
    if let Some(e) = a.max_epochs {
        base.max_epochs = e;
    }
    base.check().map_err(lib_err("training config"))?;
    let kind = ModelKind::from(a.model);
    let (runs, is_sweep) = a.seeds.runs()?;
    let inputs = runs
        .iter()
        .map(|&s| resolve_input("--data", &a.data, s, DATASET_FILE))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds: Vec<u64> = runs.iter().map(|s| s.unwrap_or(base.seed)).collect();
    let config = json!({ "model": kind, "train": base, "data": inputs });
    let manifest = RunManifest::begin("train", a.spec.as_deref(), seeds, &a.out, config)?;
    let jobs: Vec<(Option<u64>, PathBuf)> = runs.into_iter().zip(inputs).collect();
    let threads = thread_cap()?;
    let results = parallel_map(&jobs, threads, |(seed, input)| -> Result<String, CliError> {
        let (data, split) = load_split(input)?;
        let cfg = TrainConfig { seed: seed.unwrap_or(base.seed), ..base.clone() };
        let train_set = part(&data, &split, SplitArg::Train);
        let val_set = part(&data, &split, SplitArg::Val);
        if val_set.is_empty() {
            return Err(CliError::invalid(format!("--data: {}: empty validation split", input.display())));
        }
        let ck = train_checkpoint(kind, &train_set, &val_set, &cfg).map_err(lib_err("train"))?;
        ck.save(&seed_dir(&a.out, *seed, is_sweep).join(CHECKPOINT_FILE)).map_err(lib_err("--out"))?;
        let best = ck.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        Ok(format!(
            "seed {}: {} epochs, best validation loss {best:.5}, threshold {:.1}",
            cfg.seed,
            ck.history.len(),
            ck.threshold
        ))
    });
    for r in results {
        println!("{}", r?);
    }
    manifest.finish()
}

struct Loaded {
    seed: Option<u64>,
    checkpoint: Checkpoint,
    data: Vec<LabeledQp>,
}

fn load_model_data(io: &ModelDataArgs) -> Result<(Vec<Loaded>, bool), CliError> {
    if let Some(t) = io.threshold_override {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::invalid("--threshold-override: must lie in [0, 1]"));
        }
    }
    let (runs, is_sweep) = sweep(None, &io.seeds)?;
    let mut out = Vec::new();
    for seed in runs {
        let ck_path = resolve_input("--checkpoint", &io.checkpoint, seed, CHECKPOINT_FILE)?;
        let mut checkpoint = Checkpoint::load(&ck_path).map_err(lib_err(format!("--checkpoint: {}", ck_path.display())))?;
        if let Some(t) = io.threshold_override {
            checkpoint.threshold = t;
        }
        let (data, split) = load_split(&resolve_input("--data", &io.data, seed, DATASET_FILE)?)?;
        let data = part(&data, &split, io.split);
        if data.is_empty() {
            return Err(CliError::invalid(format!("--split: the {:?} split is empty", io.split)));
        }
        out.push(Loaded { seed, checkpoint, data });
    }
    Ok((out, is_sweep))
}

fn io_config(io: &ModelDataArgs) -> serde_json::Value {
    json!({
        "checkpoint": io.checkpoint,
        "data": io.data,
        "split": io.split,
        "threshold_override": io.threshold_override,
    })
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let io = &a.io;
    let (runs, _) = load_model_data(io)?;
    let seeds = runs.iter().map(|r| r.seed.unwrap_or(r.checkpoint.config.seed)).collect();
    let manifest = RunManifest::begin("evaluate", None, seeds, &io.out, io_config(io))?;
    let mut reports = Vec::new();
    let mut naive = Vec::new();
    for run in &runs {
        let seed = Some(run.seed.unwrap_or(run.checkpoint.config.seed));
        let mut report = eval::evaluate_checkpoint(&run.checkpoint, &run.data).map_err(lib_err("--checkpoint"))?;
        report.seed = seed;
        let labels: Vec<f64> = run.data.iter().flat_map(LabeledQp::labels).collect();
        naive.push(ClassificationReport { seed, ..eval::naive_baseline(&labels) });
        reports.push(report);
    }
    let write = |name: &str, text: String| {
        datagen::write_atomic(&io.out.join(name), text.as_bytes()).map_err(lib_err("--out"))
    };
    write("metrics.csv", eval::metrics_csv(&reports).map_err(lib_err("metrics"))?)?;
    write("naive.csv", eval::metrics_csv(&naive).map_err(lib_err("metrics"))?)?;
    let table = eval::aggregate_reports(&reports).to_table();
    write("table.txt", table.clone())?;
    print!("{table}");
    let naive_acc = eval::aggregate_reports(&naive).accuracy.mean;
    println!("Naive accuracy  {naive_acc:.2}");
    manifest.finish()
}

#[derive(Serialize)]
struct BenchSummaryFile {
    #[serde(flatten)]
    summary: eval::BenchSummary,
    prediction_seconds: f64,
    /// `(instance, reason)`; the flattened summary already holds their count.
    failed_instances: Vec<(usize, String)>,
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let io = &a.io;
    let (runs, is_sweep) = load_model_data(io)?;
    let seeds = runs.iter().map(|r| r.seed.unwrap_or(r.checkpoint.config.seed)).collect();
    let manifest = RunManifest::begin("bench", None, seeds, &io.out, io_config(io))?;
    let opts = SolverOptions::default();
    // Sequential on purpose: parallel solves would distort the timings.
    for run in &runs {
        let outcome = eval::compare_cold_warm(&run.data, &run.checkpoint, &opts).map_err(lib_err("bench"))?;
        let dir = seed_dir(&io.out, run.seed, is_sweep);
        eval::write_bench(&dir, &outcome).map_err(lib_err("--out"))?;
        let summary = outcome.summary();
        let file = BenchSummaryFile {
            summary,
            prediction_seconds: outcome.prediction_seconds,
            failed_instances: outcome.failures.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).map_err(CliError::runtime)?;
        text.push('\n');
        datagen::write_atomic(&dir.join("summary.json"), text.as_bytes()).map_err(lib_err("--out"))?;
        if let Some(s) = run.seed {
            println!("seed {s}:");
        }
        if !outcome.records.is_empty() {
            let table = eval::percentile_summary(&outcome.records, BenchField::Iterations, &TABLE_PERCENTILES)
                .map_err(lib_err("bench"))?;
            print!("{}", table.to_text());
        }
        println!(
            "mean iterations cold {:.2} warm {:.2}; {} instances, {} failures",
            summary.mean_iters_cold, summary.mean_iters_warm, summary.instances, summary.failures
        );
    }
    manifest.finish()
}

#[derive(Serialize)]
struct SolveOutput {
    x: Vec<f64>,
    lambda: Vec<f64>,
    active_set: Vec<usize>,
    objective: f64,
    #[serde(flatten)]
    stats: SolveStats,
}

fn solve_qp(a: SolveArgs) -> Result<(), CliError> {
    let record: QpRecord = read_json("--qp", &a.qp)?;
    let qp = record.to_qp().map_err(lib_err("--qp"))?;
    let warm = a.warm_set.unwrap_or_default();
    WorkingSet::from_indices(warm.clone(), qp.m()).map_err(lib_err("--warm-set"))?;
    let start = Instant::now();
    let df = qp.to_dual().map_err(lib_err("--qp"))?;
    let sol = solve_warm(&df, &warm, &SolverOptions::default()).map_err(lib_err("solve"))?;
    let solve_seconds = start.elapsed().as_secs_f64();
    let out = SolveOutput {
        x: sol.x.iter().copied().collect(),
        lambda: sol.lambda.iter().copied().collect(),
        active_set: sol.active_set.clone(),
        objective: qp.objective(&sol.x),
        stats: SolveStats {
            iterations: sol.iterations,
            status: sol.status,
            solve_seconds,
            warm_set_size: warm.len(),
        },
    };
    let mut text = serde_json::to_string_pretty(&out).map_err(CliError::runtime)?;
    text.push('\n');
    match &a.out {
        Some(path) => datagen::write_atomic(path, text.as_bytes()).map_err(lib_err("--out"))?,
        None => print!("{text}"),
    }
    if sol.status != SolveStatus::Optimal {
        eprintln!("status: {}", sol.status);
    }
    Ok(())
}
