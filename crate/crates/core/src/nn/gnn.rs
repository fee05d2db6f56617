use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{apply_leaky, leaky_backward, sigmoid, GraphInput, LeConvLayer};
use super::loss::{weighted_bce_logits, LossConfig, LossSum};
use super::Learner;
use crate::error::{Error, Result};
use crate::graph::{BipartiteQPGraph, FEATURE_WIDTH};
use crate::qp::QuadraticProgram;

pub const HIDDEN_WIDTH: usize = 128;

/// Stack of LEConv layers, LeakyReLU between layers, sigmoid on the single output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub layers: Vec<LeConvLayer>,
}

struct Cache {
    inputs: Vec<DMatrix<f64>>,
    pres: Vec<DMatrix<f64>>,
}

impl GnnModel {
    /// `dims` lists layer widths from input to output, e.g. `[3, 128, 128, 1]`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| LeConvLayer::random(&mut rng, w[0], w[1]))
            .collect();
        Ok(GnnModel { layers })
    }

    pub fn standard(seed: u64) -> Self {
        Self::new(&[FEATURE_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], seed).expect("valid dims")
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].d_in()];
        dims.extend(self.layers.iter().map(|l| l.d_out()));
        dims
    }

    fn forward_cached(&self, graph: &GraphInput) -> Cache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut x = graph.features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(graph, &x);
            let next = if i + 1 < self.layers.len() { Some(apply_leaky(&pre)) } else { None };
            inputs.push(x);
            pres.push(pre);
            match next {
                Some(n) => x = n,
                None => break,
            }
        }
        Cache { inputs, pres }
    }

    /// Output-layer pre-activations for every node.
    pub fn forward_logits(&self, graph: &GraphInput) -> Vec<f64> {
        let cache = self.forward_cached(graph);
        cache.pres.last().expect("at least one layer").column(0).iter().copied().collect()
    }

    /// Probabilities for all `n + m` nodes.
    pub fn forward(&self, graph: &GraphInput) -> Vec<f64> {
        self.forward_logits(graph).into_iter().map(sigmoid).collect()
    }

    pub fn forward_graph(&self, graph: &BipartiteQPGraph) -> Vec<f64> {
        self.forward(&GraphInput::from_graph(graph))
    }

    fn backward(&self, graph: &GraphInput, cache: &Cache, d_logits: DMatrix<f64>) -> GnnModel {
        let mut grads = self.zeros_like();
        let mut d_pre = d_logits;
        for i in (0..self.layers.len()).rev() {
            let d_x = self.layers[i].backward(
                graph,
                &cache.inputs[i],
                &d_pre,
                &mut grads.layers[i],
                i > 0,
            );
            if let Some(d_x) = d_x {
                d_pre = leaky_backward(&cache.pres[i - 1], &d_x);
            }
        }
        grads
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::field("dims", format!("{dims:?} needs at least two positive widths")));
    }
    if dims[0] != FEATURE_WIDTH || *dims.last().unwrap() != 1 {
        return Err(Error::field(
            "dims",
            format!("{dims:?} must start at {FEATURE_WIDTH} and end at 1"),
        ));
    }
    Ok(())
}

impl Learner for GnnModel {
    type Input = GraphInput;

    fn prepare(&self, qp: &QuadraticProgram) -> Result<GraphInput> {
        Ok(GraphInput::from_graph(&BipartiteQPGraph::from_qp(qp)))
    }

    fn batch_loss_grad(
        &self,
        batch: &[&GraphInput],
        labels: &[f64],
        cfg: &LossConfig,
    ) -> (LossSum, Self) {
        let merged = GraphInput::batch(batch);
        let cache = self.forward_cached(&merged);
        let out = cache.pres.last().expect("layers");
        let logits: Vec<f64> = merged.constraint_nodes.iter().map(|&i| out[(i, 0)]).collect();
        let (sum, d_con) = weighted_bce_logits(&logits, labels, cfg);
        let mut d_logits = DMatrix::zeros(merged.num_nodes(), 1);
        for (&i, g) in merged.constraint_nodes.iter().zip(d_con) {
            d_logits[(i, 0)] = g;
        }
        let grads = self.backward(&merged, &cache, d_logits);
        (sum, grads)
    }

    fn batch_constraint_probs(&self, batch: &[&GraphInput]) -> Vec<f64> {
        let merged = GraphInput::batch(batch);
        let logits = self.forward_logits(&merged);
        merged.constraint_nodes.iter().map(|&i| sigmoid(logits[i])).collect()
    }

    fn zeros_like(&self) -> Self {
        GnnModel {
            layers: self
                .layers
                .iter()
                .map(|l| LeConvLayer::zeros(l.d_in(), l.d_out()))
                .collect(),
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w1.as_slice(), l.w2.as_slice(), l.w3.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w1.as_mut_slice(),
                    l.w2.as_mut_slice(),
                    l.w3.as_mut_slice(),
                    l.bias.as_mut_slice(),
                ]
            })
            .collect()
    }
}
