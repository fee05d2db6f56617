use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gnn::HIDDEN_WIDTH;
use super::layers::{apply_leaky, leaky_backward, sigmoid, DenseLayer};
use super::loss::{weighted_bce_logits, LossConfig, LossSum};
use super::Learner;
use crate::error::{Error, Result};
use crate::qp::QuadraticProgram;

/// Size-locked baseline: flattened `[H; A; f; b]` in, one logit per variable and constraint out.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub n: usize,
    pub m: usize,
    pub layers: Vec<DenseLayer>,
}

pub fn input_len(n: usize, m: usize) -> usize {
    n * n + m * n + n + m
}

/// Row-major `H`, row-major `A`, then `f`, then `b`.
pub fn flatten_qp(qp: &QuadraticProgram) -> DVector<f64> {
    let (n, m) = (qp.n(), qp.m());
    let mut v = Vec::with_capacity(input_len(n, m));
    for i in 0..n {
        v.extend(qp.h.row(i).iter());
    }
    for j in 0..m {
        v.extend(qp.a.row(j).iter());
    }
    v.extend(qp.f.iter());
    v.extend(qp.b.iter());
    DVector::from_vec(v)
}

impl MlpModel {
    pub fn new(n: usize, m: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_len(n, m)];
        dims.extend_from_slice(hidden);
        dims.push(n + m);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::random(&mut rng, w[0], w[1]))
            .collect();
        MlpModel { n, m, layers }
    }

    pub fn standard(n: usize, m: usize, seed: u64) -> Self {
        Self::new(n, m, &[HIDDEN_WIDTH, HIDDEN_WIDTH], seed)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w.nrows()];
        dims.extend(self.layers.iter().map(|l| l.w.ncols()));
        dims
    }

    fn check_size(&self, qp: &QuadraticProgram) -> Result<()> {
        if (qp.n(), qp.m()) != (self.n, self.m) {
            return Err(Error::SizeLock {
                expected: (self.n, self.m),
                got: (qp.n(), qp.m()),
            });
        }
        Ok(())
    }

    fn stack(batch: &[&DVector<f64>]) -> DMatrix<f64> {
        let d = batch.first().map_or(0, |v| v.len());
        DMatrix::from_fn(batch.len(), d, |i, j| batch[i][j])
    }

    fn forward_cached(&self, x: DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut inputs = Vec::new();
        let mut pres = Vec::new();
        let mut x = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&x);
            let last = i + 1 == self.layers.len();
            let next = (!last).then(|| apply_leaky(&pre));
            inputs.push(x);
            pres.push(pre);
            match next {
                Some(n) => x = n,
                None => break,
            }
        }
        (inputs, pres)
    }

    /// Probabilities for all `n + m` entries.
    pub fn forward(&self, qp: &QuadraticProgram) -> Result<Vec<f64>> {
        self.check_size(qp)?;
        let x = flatten_qp(qp);
        let (_, pres) = self.forward_cached(Self::stack(&[&x]));
        Ok(pres.last().unwrap().row(0).iter().map(|&z| sigmoid(z)).collect())
    }
}

impl Learner for MlpModel {
    type Input = DVector<f64>;

    fn prepare(&self, qp: &QuadraticProgram) -> Result<DVector<f64>> {
        self.check_size(qp)?;
        Ok(flatten_qp(qp))
    }

    fn batch_loss_grad(
        &self,
        batch: &[&DVector<f64>],
        labels: &[f64],
        cfg: &LossConfig,
    ) -> (LossSum, Self) {
        let (inputs, pres) = self.forward_cached(Self::stack(batch));
        let out = pres.last().unwrap();
        let (n, m) = (self.n, self.m);
        // Constraint logits row by row; variable outputs are masked out of the loss.
        let logits: Vec<f64> = (0..batch.len())
            .flat_map(|r| (0..m).map(move |j| (r, n + j)))
            .map(|(r, c)| out[(r, c)])
            .collect();
        let (sum, d_con) = weighted_bce_logits(&logits, labels, cfg);
        let mut d_pre = DMatrix::zeros(batch.len(), n + m);
        for (k, g) in d_con.into_iter().enumerate() {
            d_pre[(k / m, n + k % m)] = g;
        }
        let mut grads = self.zeros_like();
        for i in (0..self.layers.len()).rev() {
            let d_x = self.layers[i].backward(&inputs[i], &d_pre, &mut grads.layers[i], i > 0);
            if let Some(d_x) = d_x {
                d_pre = leaky_backward(&pres[i - 1], &d_x);
            }
        }
        (sum, grads)
    }

    fn batch_constraint_probs(&self, batch: &[&DVector<f64>]) -> Vec<f64> {
        let (_, pres) = self.forward_cached(Self::stack(batch));
        let out = pres.last().unwrap();
        (0..batch.len())
            .flat_map(|r| (0..self.m).map(move |j| (r, j)))
            .map(|(r, j)| sigmoid(out[(r, self.n + j)]))
            .collect()
    }

    fn zeros_like(&self) -> Self {
        MlpModel {
            n: self.n,
            m: self.m,
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::fixtures::two_by_three;

    #[test]
    fn input_length_formula() {
        assert_eq!(input_len(10, 40), 550);
        let qp = two_by_three();
        let x = flatten_qp(&qp);
        assert_eq!(x.len(), input_len(2, 3));
        assert_eq!(
            x.as_slice(),
            &[2.0, 1.0, 1.0, 2.0, 1.0, 1.0, -1.0, 2.0, -3.0, 1.0, -4.0, -8.0, 3.0, 0.0, 10.0]
        );
    }

    #[test]
    fn zero_weights_and_size_lock() {
        let model = MlpModel::standard(2, 3, 0).zeros_like();
        assert_eq!(model.forward(&two_by_three()).unwrap(), vec![0.5; 5]);
        let other = MlpModel::standard(2, 4, 0);
        assert!(matches!(
            other.forward(&two_by_three()),
            Err(Error::SizeLock { expected: (2, 4), got: (2, 3) })
        ));
        assert_eq!(other.dims(), vec![input_len(2, 4), 128, 128, 6]);
    }
}
