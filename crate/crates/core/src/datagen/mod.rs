//! Labeled dataset generation: the synthetic parametric family and condensed MPC problems.

pub mod mpc;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::split_ranges;
use crate::qp::{ParametricQP, QpRecord, QuadraticProgram, SolveStatus};
use crate::solver::{solve_cold, SolverOptions};

pub use crate::nn::train::LabeledQp;
pub use mpc::{condense_mpc, pendulum_model, CondensedMpc, MpcSpec, PendulumParams};

/// Ridge added to `GGᵀ` so that `H` is numerically positive definite.
pub const HESSIAN_RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(default)]
    pub bandwidth: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [("n", self.n), ("m", self.m), ("p", self.p)] {
            if v == 0 {
                return Err(Error::field(name, "must be at least 1"));
            }
        }
        if let Some(k) = self.bandwidth {
            if k >= self.n {
                return Err(Error::field("bandwidth", format!("{k} must be below n = {}", self.n)));
            }
        }
        Ok(())
    }
}

/// Column around which row `j` of an `m × n` banded matrix is centred.
pub fn band_center(j: usize, m: usize, n: usize) -> usize {
    j * n / m
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Row-major fill so the draw order matches the JSON layout.
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = rng.sample(StandardNormal);
        }
    }
    out
}

/// Draws the structure of one synthetic family. With a bandwidth `k`, the generator has
/// half-width `k` and each row of `A` keeps the `2k + 1` columns around its band centre.
pub fn generate_parametric(spec: &SyntheticSpec) -> Result<ParametricQP> {
    spec.check()?;
    let (n, m, p) = (spec.n, spec.m, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut g = gaussian(&mut rng, n, n);
    let mut a = gaussian(&mut rng, m, n);
    let f_hat = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let f_mat = gaussian(&mut rng, n, p);
    let t_mat = gaussian(&mut rng, n, p);
    let b_hat = DVector::from_iterator(m, (0..m).map(|_| rng.random::<f64>()));
    if let Some(k) = spec.bandwidth {
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) > k {
                    g[(i, j)] = 0.0;
                }
            }
        }
        for j in 0..m {
            let c = band_center(j, m, n);
            for i in 0..n {
                if i.abs_diff(c) > k {
                    a[(j, i)] = 0.0;
                }
            }
        }
    }
    let mut h = &g * g.transpose();
    // Exact symmetry regardless of summation order.
    for i in 0..n {
        for j in 0..i {
            h[(j, i)] = h[(i, j)];
        }
        h[(i, i)] += HESSIAN_RIDGE;
    }
    Ok(ParametricQP { h, a, f_hat, f_mat, b_hat, t_mat })
}

/// RNG for instance `index`: seeded with `seed + index` on a stream separate from structure draws.
pub fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    rng.set_stream(1);
    rng
}

/// `count` instances with `η ~ N(0, I)`.
pub fn sample_instances(pqp: &ParametricQP, count: usize, seed: u64) -> Result<Vec<QuadraticProgram>> {
    (0..count)
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let eta = DVector::from_iterator(
                pqp.p(),
                (0..pqp.p()).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            pqp.instantiate(&eta)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    /// `(index, reason)` for every instance left out.
    pub rejected: Vec<(usize, String)>,
}

impl RejectionReport {
    pub fn len(&self) -> usize {
        self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rejected.is_empty()
    }
}

/// Labels an instance with the cold-start active set, or returns why it cannot be labeled.
pub fn label_instance(qp: &QuadraticProgram, opts: &SolverOptions) -> std::result::Result<Vec<usize>, String> {
    let df = qp.to_dual().map_err(|e| e.to_string())?;
    let sol = solve_cold(&df, opts).map_err(|e| e.to_string())?;
    match sol.status {
        SolveStatus::Optimal => Ok(sol.active_set),
        other => Err(other.to_string()),
    }
}

pub fn label_dataset(
    instances: Vec<QuadraticProgram>,
    opts: &SolverOptions,
) -> (Vec<LabeledQp>, RejectionReport) {
    let mut out = Vec::with_capacity(instances.len());
    let mut report = RejectionReport::default();
    for (i, qp) in instances.into_iter().enumerate() {
        match label_instance(&qp, opts) {
            Ok(active_set) => out.push(LabeledQp { qp, active_set }),
            Err(reason) => report.rejected.push((i, reason)),
        }
    }
    (out, report)
}

/// Structure plus `count` labeled instances from one spec.
pub fn synthetic_dataset(spec: &SyntheticSpec, count: usize) -> Result<(Vec<LabeledQp>, RejectionReport)> {
    let pqp = generate_parametric(spec)?;
    let instances = sample_instances(&pqp, count, spec.seed)?;
    Ok(label_dataset(instances, &SolverOptions::default()))
}

/// Fraction of constraint labels that are active.
pub fn active_fraction(data: &[LabeledQp]) -> f64 {
    let active: usize = data.iter().map(|d| d.active_set.len()).sum();
    let total: usize = data.iter().map(|d| d.qp.m()).sum();
    if total == 0 {
        0.0
    } else {
        active as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
}

impl SplitBounds {
    pub fn for_len(len: usize) -> Self {
        let (a, b, c) = split_ranges(len);
        SplitBounds {
            train: [a.start, a.end],
            val: [b.start, b.end],
            test: [c.start, c.end],
        }
    }
}

/// Sidecar written next to each dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub spec: serde_json::Value,
    pub seed: u64,
    pub count: usize,
    pub rejected: usize,
    pub split: SplitBounds,
}

pub fn meta_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    dataset.with_file_name(name)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_jsonl(data: &[LabeledQp]) -> Result<String> {
    let mut out = String::new();
    for d in data {
        out.push_str(&serde_json::to_string(&QpRecord::from_qp(&d.qp, Some(d.active_set.clone())))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, data: &[LabeledQp], meta: &DatasetMeta) -> Result<()> {
    write_atomic(path, to_jsonl(data)?.as_bytes())?;
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    write_atomic(&meta_path(path), text.as_bytes())
}

/// Reads QP records line by line. Records without an `active_set` get an empty label set.
pub fn read_records(path: &Path) -> Result<Vec<(QuadraticProgram, Option<Vec<usize>>)>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QpRecord = serde_json::from_str(&line).map_err(|e| {
            Error::field(format!("line {}", lineno + 1), e.to_string())
        })?;
        let qp = rec.to_qp().map_err(|e| Error::field(format!("line {}", lineno + 1), e.to_string()))?;
        out.push((qp, rec.active_set));
    }
    Ok(out)
}

/// Reads a labeled dataset; every record must carry `active_set`.
pub fn read_dataset(path: &Path) -> Result<Vec<LabeledQp>> {
    read_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, (qp, set))| match set {
            Some(active_set) => Ok(LabeledQp { qp, active_set }),
            None => Err(Error::field(format!("line {}", i + 1), "missing active_set")),
        })
        .collect()
}

pub fn read_meta(dataset: &Path) -> Result<Option<DatasetMeta>> {
    let path = meta_path(dataset);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
}
