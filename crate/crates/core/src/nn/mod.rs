//! Active-constraint predictors: a message-passing GNN over the bipartite QP graph and a
//! fixed-size MLP baseline, trained with weighted cross-entropy and AdamW.

pub mod checkpoint;
pub mod gnn;
pub mod layers;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod train;

pub use checkpoint::{train_checkpoint, AnyModel, Checkpoint, ModelKind};
pub use gnn::GnnModel;
pub use layers::{GraphInput, LeConvLayer};
pub use loss::{weighted_bce, LossConfig};
pub use mlp::MlpModel;
pub use optim::{adamw_step, AdamWConfig};
pub use train::{select_threshold, split_ranges, train, EarlyStopping, EpochRecord, LabeledQp, TrainConfig};

use crate::error::Result;
use crate::qp::QuadraticProgram;
use loss::LossSum;

/// Shared surface of the trainable models. Gradients are returned as a zero-initialized model of
/// the same shape, so parameters and gradients line up slice for slice.
pub trait Learner: Clone {
    type Input;

    fn prepare(&self, qp: &QuadraticProgram) -> Result<Self::Input>;

    /// Loss over the constraint outputs of a batch and its exact gradient. `labels` lists the
    /// constraint labels of each batch member in order.
    fn batch_loss_grad(&self, batch: &[&Self::Input], labels: &[f64], cfg: &LossConfig)
        -> (LossSum, Self);

    /// Constraint probabilities for each batch member, concatenated.
    fn batch_constraint_probs(&self, batch: &[&Self::Input]) -> Vec<f64>;

    fn zeros_like(&self) -> Self;

    fn params(&self) -> Vec<&[f64]>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
