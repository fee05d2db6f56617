//! JSON checkpoints: model kind, weights as nested arrays, threshold, config and history.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::gnn::GnnModel;
use super::layers::{DenseLayer, LeConvLayer};
use super::mlp::MlpModel;
use super::train::{predict_probs, select_threshold, threshold_set, train, EpochRecord, LabeledQp, TrainConfig};
use super::Learner;
use crate::error::{Error, Result};
use crate::graph::FEATURE_WIDTH;
use crate::qp::{matrix_to_rows, rows_to_matrix, QuadraticProgram};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gnn,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gnn" => Ok(ModelKind::Gnn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::field("kind", format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Gnn(GnnModel),
    Mlp(MlpModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub threshold: f64,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct LeConvWeights {
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    w3: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseWeights {
    w: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightList<T> {
    layers: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    kind: ModelKind,
    dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    problem_size: Option<(usize, usize)>,
    weights: Value,
    threshold: f64,
    config: TrainConfig,
    history: Vec<EpochRecord>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn load_matrix(rows: &[Vec<f64>], shape: (usize, usize), name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 {
        return Err(bad(format!("{name} has {} rows, expected {}", rows.len(), shape.0)));
    }
    rows_to_matrix(rows, shape.1, name).map_err(|e| bad(e.to_string()))
}

fn load_bias(v: &[f64], len: usize, name: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(bad(format!("{name} has length {}, expected {len}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Gnn(_) => ModelKind::Gnn,
            AnyModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            AnyModel::Gnn(g) => g.dims(),
            AnyModel::Mlp(m) => m.dims(),
        }
    }

    /// Constraint probabilities for one QP.
    pub fn constraint_probs(&self, qp: &QuadraticProgram) -> Result<Vec<f64>> {
        match self {
            AnyModel::Gnn(g) => Ok(g.batch_constraint_probs(&[&g.prepare(qp)?])),
            AnyModel::Mlp(m) => Ok(m.batch_constraint_probs(&[&m.prepare(qp)?])),
        }
    }

    /// Constraint probabilities for a dataset, batched.
    pub fn dataset_probs(&self, data: &[LabeledQp]) -> Result<Vec<Vec<f64>>> {
        match self {
            AnyModel::Gnn(g) => predict_probs(g, data),
            AnyModel::Mlp(m) => predict_probs(m, data),
        }
    }
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    /// Constraints with probability at least the threshold, ascending.
    pub fn predict_active_set(&self, qp: &QuadraticProgram) -> Result<Vec<usize>> {
        Ok(threshold_set(&self.model.constraint_probs(qp)?, self.threshold))
    }

    pub fn to_json(&self) -> Result<String> {
        let (weights, problem_size) = match &self.model {
            AnyModel::Gnn(g) => {
                let layers: Vec<LeConvWeights> = g
                    .layers
                    .iter()
                    .map(|l| LeConvWeights {
                        w1: matrix_to_rows(&l.w1),
                        w2: matrix_to_rows(&l.w2),
                        w3: matrix_to_rows(&l.w3),
                        bias: l.bias.iter().copied().collect(),
                    })
                    .collect();
                (serde_json::to_value(WeightList { layers })?, None)
            }
            AnyModel::Mlp(m) => {
                let layers: Vec<DenseWeights> = m
                    .layers
                    .iter()
                    .map(|l| DenseWeights {
                        w: matrix_to_rows(&l.w),
                        bias: l.bias.iter().copied().collect(),
                    })
                    .collect();
                (serde_json::to_value(WeightList { layers })?, Some((m.n, m.m)))
            }
        };
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            kind: self.kind(),
            dims: self.model.dims(),
            problem_size,
            weights,
            threshold: self.threshold,
            config: self.config.clone(),
            history: self.history.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| bad(format!("unreadable checkpoint: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        if !(0.0..=1.0).contains(&file.threshold) {
            return Err(bad(format!("threshold {} outside [0, 1]", file.threshold)));
        }
        let dims = &file.dims;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(bad(format!("invalid dims {dims:?}")));
        }
        let model = match file.kind {
            ModelKind::Gnn => {
                if dims[0] != FEATURE_WIDTH || *dims.last().unwrap() != 1 {
                    return Err(bad(format!("gnn dims {dims:?} must run from 3 to 1")));
                }
                let list: WeightList<LeConvWeights> = serde_json::from_value(file.weights)
                    .map_err(|e| bad(format!("gnn weights: {e}")))?;
                if list.layers.len() + 1 != dims.len() {
                    return Err(bad("layer count does not match dims"));
                }
                let layers = list
                    .layers
                    .iter()
                    .zip(dims.windows(2))
                    .enumerate()
                    .map(|(k, (l, w))| {
                        Ok(LeConvLayer {
                            w1: load_matrix(&l.w1, (w[0], w[1]), &format!("layers[{k}].w1"))?,
                            w2: load_matrix(&l.w2, (w[0], w[1]), &format!("layers[{k}].w2"))?,
                            w3: load_matrix(&l.w3, (w[0], w[1]), &format!("layers[{k}].w3"))?,
                            bias: load_bias(&l.bias, w[1], &format!("layers[{k}].bias"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                AnyModel::Gnn(GnnModel { layers })
            }
            ModelKind::Mlp => {
                let (n, m) = file
                    .problem_size
                    .ok_or_else(|| bad("mlp checkpoint lacks problem_size"))?;
                if dims[0] != super::mlp::input_len(n, m) || *dims.last().unwrap() != n + m {
                    return Err(bad(format!("mlp dims {dims:?} do not fit n={n}, m={m}")));
                }
                let list: WeightList<DenseWeights> = serde_json::from_value(file.weights)
                    .map_err(|e| bad(format!("mlp weights: {e}")))?;
                if list.layers.len() + 1 != dims.len() {
                    return Err(bad("layer count does not match dims"));
                }
                let layers = list
                    .layers
                    .iter()
                    .zip(dims.windows(2))
                    .enumerate()
                    .map(|(k, (l, w))| {
                        Ok(DenseLayer {
                            w: load_matrix(&l.w, (w[0], w[1]), &format!("layers[{k}].w"))?,
                            bias: load_bias(&l.bias, w[1], &format!("layers[{k}].bias"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                AnyModel::Mlp(MlpModel { n, m, layers })
            }
        };
        Ok(Checkpoint {
            model,
            threshold: file.threshold,
            config: file.config,
            history: file.history,
        })
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        crate::datagen::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Trains a fresh model of `kind`, then picks the threshold on the validation split.
pub fn train_checkpoint(
    kind: ModelKind,
    train_set: &[LabeledQp],
    val_set: &[LabeledQp],
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    cfg.check()?;
    let first = train_set.first().ok_or(Error::EmptyDataset)?;
    let hidden = [cfg.hidden_width, cfg.hidden_width];
    let (model, history) = match kind {
        ModelKind::Gnn => {
            let init = GnnModel::new(&[FEATURE_WIDTH, hidden[0], hidden[1], 1], cfg.seed)?;
            let out = train(init, train_set, val_set, cfg)?;
            (AnyModel::Gnn(out.model), out.history)
        }
        ModelKind::Mlp => {
            let init = MlpModel::new(first.qp.n(), first.qp.m(), &hidden, cfg.seed);
            let out = train(init, train_set, val_set, cfg)?;
            (AnyModel::Mlp(out.model), out.history)
        }
    };
    let probs: Vec<f64> = model.dataset_probs(val_set)?.into_iter().flatten().collect();
    let labels: Vec<f64> = val_set.iter().flat_map(LabeledQp::labels).collect();
    Ok(Checkpoint {
        threshold: select_threshold(&probs, &labels),
        model,
        config: cfg.clone(),
        history,
    })
}
