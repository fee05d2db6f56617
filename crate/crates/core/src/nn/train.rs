//! Minibatch training with early stopping, threshold search and the dataset split.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LossConfig, LossSum};
use super::optim::{AdamW, AdamWConfig};
use super::Learner;
use crate::error::{Error, Result};
use crate::qp::QuadraticProgram;

/// Batches used for forward-only passes (validation loss, prediction).
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_min_delta: f64,
    pub early_stop_patience: usize,
    /// `None` derives the weight from the training split (#inactive / #active).
    pub pos_weight: Option<f64>,
    pub sparsity_reg_coefficient: f64,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            batch_size: 32,
            max_epochs: 200,
            early_stop_min_delta: 1e-3,
            early_stop_patience: 5,
            pos_weight: None,
            sparsity_reg_coefficient: 0.0,
            hidden_width: super::gnn::HIDDEN_WIDTH,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::field("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::field("beta1/beta2", "must lie in [0, 1)"));
        }
        if !(o.epsilon > 0.0) {
            return Err(Error::field("epsilon", "must be positive"));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(Error::field("weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::field("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::field("max_epochs", "must be positive"));
        }
        if !(self.early_stop_min_delta >= 0.0) {
            return Err(Error::field("early_stop_min_delta", "must be non-negative"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::field("early_stop_patience", "must be positive"));
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::field("pos_weight", "must be positive"));
            }
        }
        if !(self.sparsity_reg_coefficient >= 0.0) {
            return Err(Error::field("sparsity_reg_coefficient", "must be non-negative"));
        }
        if self.hidden_width == 0 {
            return Err(Error::field("hidden_width", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopSignal {
    Improved,
    Stalled,
    Stop,
}

/// An epoch improves only if it beats the best loss so far by more than `min_delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub min_delta: f64,
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stalled: usize,
}

impl EarlyStopping {
    pub fn new(min_delta: f64, patience: usize) -> Self {
        EarlyStopping {
            min_delta,
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stalled: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopSignal {
        if self.best_epoch.is_none() || val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.stalled = 0;
            return StopSignal::Improved;
        }
        self.stalled += 1;
        if self.stalled >= self.patience {
            StopSignal::Stop
        } else {
            StopSignal::Stalled
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// A QP together with its optimal active set, as stored in datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledQp {
    pub qp: QuadraticProgram,
    pub active_set: Vec<usize>,
}

impl LabeledQp {
    /// One 0/1 label per constraint.
    pub fn labels(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.qp.m()];
        for &i in &self.active_set {
            y[i] = 1.0;
        }
        y
    }
}

/// Train/validation/test index ranges for a 70/15/15 split in dataset order.
pub fn split_ranges(len: usize) -> (Range<usize>, Range<usize>, Range<usize>) {
    let a = len * 70 / 100;
    let b = len * 85 / 100;
    (0..a, a..b, b..len)
}

/// `#inactive / #active` over all constraint labels.
pub fn class_weight(data: &[LabeledQp]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let active: usize = data.iter().map(|d| d.active_set.len()).sum();
    let total: usize = data.iter().map(|d| d.qp.m()).sum();
    if active == 0 {
        return Err(Error::SingleClass(0));
    }
    if active == total {
        return Err(Error::SingleClass(1));
    }
    Ok((total - active) as f64 / active as f64)
}

pub struct TrainOutcome<L> {
    pub model: L,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub loss: LossConfig,
}

struct Prepared<I> {
    inputs: Vec<I>,
    labels: Vec<Vec<f64>>,
}

fn prepare<L: Learner>(model: &L, data: &[LabeledQp]) -> Result<Prepared<L::Input>> {
    let inputs = data.iter().map(|d| model.prepare(&d.qp)).collect::<Result<Vec<_>>>()?;
    let labels = data.iter().map(LabeledQp::labels).collect();
    Ok(Prepared { inputs, labels })
}

fn eval_loss<L: Learner>(model: &L, data: &Prepared<L::Input>, cfg: &LossConfig) -> f64 {
    let mut total = LossSum::default();
    let idx: Vec<usize> = (0..data.inputs.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch: Vec<&L::Input> = chunk.iter().map(|&i| &data.inputs[i]).collect();
        let labels: Vec<f64> = chunk.iter().flat_map(|&i| data.labels[i].iter().copied()).collect();
        let probs = model.batch_constraint_probs(&batch);
        total.add(LossSum::from_probs(&probs, &labels, cfg));
    }
    total.mean(cfg)
}

/// Constraint probabilities for each instance.
pub fn predict_probs<L: Learner>(model: &L, data: &[LabeledQp]) -> Result<Vec<Vec<f64>>> {
    let inputs = data.iter().map(|d| model.prepare(&d.qp)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(data.len());
    for (chunk, items) in inputs.chunks(EVAL_BATCH).zip(data.chunks(EVAL_BATCH)) {
        let batch: Vec<&L::Input> = chunk.iter().collect();
        let flat = model.batch_constraint_probs(&batch);
        let mut offset = 0;
        for d in items {
            out.push(flat[offset..offset + d.qp.m()].to_vec());
            offset += d.qp.m();
        }
    }
    Ok(out)
}

/// Runs minibatch AdamW from `init` and returns the weights of the best validation epoch.
pub fn train<L: Learner>(
    init: L,
    train_set: &[LabeledQp],
    val_set: &[LabeledQp],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<L>> {
    cfg.check()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let derived = class_weight(train_set)?;
    let loss = LossConfig {
        pos_weight: cfg.pos_weight.unwrap_or(derived),
        reg_coefficient: cfg.sparsity_reg_coefficient,
    };
    let train_data = prepare(&init, train_set)?;
    let val_data = prepare(&init, val_set)?;

    let mut model = init;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut opt = AdamW::new(cfg.optimizer, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.early_stop_min_delta, cfg.early_stop_patience);
    let mut best = model.clone();
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossSum::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&L::Input> = chunk.iter().map(|&i| &train_data.inputs[i]).collect();
            let labels: Vec<f64> =
                chunk.iter().flat_map(|&i| train_data.labels[i].iter().copied()).collect();
            let (sum, grads) = model.batch_loss_grad(&batch, &labels, &loss);
            epoch_loss.add(sum);
            opt.step(model.params_mut(), grads.params());
        }
        let val_loss = eval_loss(&model, &val_data, &loss);
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss.mean(&loss),
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopSignal::Improved => best = model.clone(),
            StopSignal::Stalled => {}
            StopSignal::Stop => break,
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        loss,
    })
}

/// Confusion counts `(tp, fp, fn, tn)` for the rule `p ≥ t` means active.
pub fn confusion(probs: &[f64], labels: &[f64], t: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= t, y > 0.5) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Grid `t = 0.0, 0.1, …, 1.0`; the largest `t` with maximal F1 wins.
pub fn select_threshold(probs: &[f64], labels: &[f64]) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let (tp, fp, fn_, _) = confusion(probs, labels, t);
        let f1 = f1_score(tp, fp, fn_);
        if f1 >= best.0 {
            best = (f1, t);
        }
    }
    best.1
}

/// Ascending constraint indices whose probability reaches the threshold.
pub fn threshold_set(probs: &[f64], threshold: f64) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::GnnModel;
    use crate::qp::fixtures::two_by_three;

    #[test]
    fn early_stopping_restores_first_epoch() {
        let mut s = EarlyStopping::new(1e-3, 5);
        let seq = [1.0, 0.9995, 0.9992, 0.9991, 0.9990, 0.9990];
        let signals: Vec<_> = seq.iter().enumerate().map(|(i, &v)| s.observe(i + 1, v)).collect();
        assert_eq!(signals[0], StopSignal::Improved);
        assert!(signals[1..5].iter().all(|&x| x == StopSignal::Stalled));
        assert_eq!(signals[5], StopSignal::Stop);
        assert_eq!(s.best_epoch(), Some(1));
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(0.1, 2);
        assert_eq!(s.observe(1, 1.0), StopSignal::Improved);
        assert_eq!(s.observe(2, 0.95), StopSignal::Stalled);
        assert_eq!(s.observe(3, 0.85), StopSignal::Improved);
        assert_eq!(s.observe(4, 0.8), StopSignal::Stalled);
        assert_eq!(s.observe(5, 0.8), StopSignal::Stop);
        assert_eq!(s.best_epoch(), Some(3));
    }

    #[test]
    fn threshold_tie_goes_high() {
        let probs = [0.9, 0.9, 0.1, 0.1, 0.1];
        let labels = [1.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(select_threshold(&probs, &labels), 0.9);
        // All 0.5: t ≤ 0.5 predicts everything active (F1 = 2·0.4/1.4), above predicts nothing.
        assert_eq!(select_threshold(&[0.5; 5], &labels), 0.5);
        let (tp, fp, fn_, tn) = confusion(&probs, &labels, 0.0);
        assert_eq!((tp, fp, fn_, tn), (2, 3, 0, 0));
    }

    #[test]
    fn threshold_set_edges() {
        let probs = [0.2, 0.7, 0.99];
        assert!(threshold_set(&probs, 1.0).is_empty());
        assert_eq!(threshold_set(&probs, 0.0), vec![0, 1, 2]);
        assert_eq!(threshold_set(&probs, 0.7), vec![1, 2]);
    }

    #[test]
    fn split_is_70_15_15() {
        assert_eq!(split_ranges(5000), (0..3500, 3500..4250, 4250..5000));
        assert_eq!(split_ranges(20), (0..14, 14..17, 17..20));
    }

    #[test]
    fn single_class_and_empty_rejected() {
        let qp = two_by_three();
        let none = vec![LabeledQp { qp: qp.clone(), active_set: vec![] }];
        let all = vec![LabeledQp { qp: qp.clone(), active_set: vec![0, 1, 2] }];
        let cfg = TrainConfig::default();
        let model = GnnModel::standard(0);
        assert!(matches!(class_weight(&none), Err(Error::SingleClass(0))));
        assert!(matches!(class_weight(&all), Err(Error::SingleClass(1))));
        assert!(matches!(train(model.clone(), &[], &none, &cfg), Err(Error::EmptyDataset)));
        assert!(matches!(train(model, &all, &all, &cfg), Err(Error::SingleClass(1))));
        let mixed = [LabeledQp { qp, active_set: vec![0, 1] }];
        assert!((class_weight(&mixed).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_history_length() {
        let qp = two_by_three();
        let data: Vec<LabeledQp> = (0..6)
            .map(|k| {
                let mut q = qp.clone();
                q.b[2] += k as f64;
                LabeledQp { qp: q, active_set: vec![0, 1] }
            })
            .collect();
        let cfg = TrainConfig {
            max_epochs: 4,
            batch_size: 4,
            hidden_width: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let model = GnnModel::new(&[3, 8, 8, 1], 1).unwrap();
            train(model, &data[..4], &data[4..], &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert!(a.history.len() <= 4 && !a.history.is_empty());
        assert!(a.history.iter().all(|h| h.train_loss >= 0.0 && h.val_loss >= 0.0));
        assert!((a.loss.pos_weight - 0.5).abs() < 1e-15);
    }
}
