//! Layer kernels with hand-derived gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::graph::BipartiteQPGraph;

pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform in `±1/√fan_in`.
pub(crate) fn init_matrix(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound))
}

/// Node features and weighted in-edges, stored by target node. Several graphs can be merged into
/// one disconnected graph with [`GraphInput::batch`].
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    pub features: DMatrix<f64>,
    in_offsets: Vec<usize>,
    in_sources: Vec<usize>,
    in_weights: Vec<f64>,
    /// `Σ_t z_ts` per node.
    degree: DVector<f64>,
    /// Global indices of constraint nodes, grouped by graph and ordered by constraint.
    pub constraint_nodes: Vec<usize>,
    /// `(first constraint slot, m)` for each graph in the batch.
    pub graph_spans: Vec<(usize, usize)>,
}

impl GraphInput {
    pub fn from_graph(g: &BipartiteQPGraph) -> Self {
        let num_nodes = g.num_nodes();
        let mut buckets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_nodes];
        for e in g.edges() {
            buckets[e.target].push((e.source, e.weight));
        }
        let mut in_offsets = Vec::with_capacity(num_nodes + 1);
        let mut in_sources = Vec::new();
        let mut in_weights = Vec::new();
        in_offsets.push(0);
        for bucket in &buckets {
            for &(s, w) in bucket {
                in_sources.push(s);
                in_weights.push(w);
            }
            in_offsets.push(in_sources.len());
        }
        let degree = DVector::from_iterator(
            num_nodes,
            buckets.iter().map(|b| b.iter().map(|(_, w)| w).sum::<f64>()),
        );
        GraphInput {
            features: g.node_features(),
            in_offsets,
            in_sources,
            in_weights,
            degree,
            constraint_nodes: (g.n..g.n + g.m).collect(),
            graph_spans: vec![(0, g.m)],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.in_sources.len()
    }

    pub fn batch(parts: &[&GraphInput]) -> GraphInput {
        let total: usize = parts.iter().map(|p| p.num_nodes()).sum();
        let width = parts.first().map_or(0, |p| p.features.ncols());
        let mut features = DMatrix::zeros(total, width);
        let mut in_offsets = vec![0];
        let mut in_sources = Vec::new();
        let mut in_weights = Vec::new();
        let mut degree = DVector::zeros(total);
        let mut constraint_nodes = Vec::new();
        let mut graph_spans = Vec::new();
        let mut node_offset = 0;
        for p in parts {
            let k = p.num_nodes();
            features.view_mut((node_offset, 0), (k, width)).copy_from(&p.features);
            degree.rows_mut(node_offset, k).copy_from(&p.degree);
            let edge_offset = in_sources.len();
            in_sources.extend(p.in_sources.iter().map(|s| s + node_offset));
            in_weights.extend_from_slice(&p.in_weights);
            in_offsets.extend(p.in_offsets[1..].iter().map(|o| o + edge_offset));
            for &(start, m) in &p.graph_spans {
                graph_spans.push((constraint_nodes.len() + start, m));
            }
            constraint_nodes.extend(p.constraint_nodes.iter().map(|c| c + node_offset));
            node_offset += k;
        }
        GraphInput {
            features,
            in_offsets,
            in_sources,
            in_weights,
            degree,
            constraint_nodes,
            graph_spans,
        }
    }

    /// `out_s = Σ_{t→s} z_ts x_t`.
    pub(crate) fn aggregate(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (rows, cols) = x.shape();
        let mut out = DMatrix::zeros(rows, cols);
        for c in 0..cols {
            let src = x.column(c);
            let src = src.as_slice();
            let dst = out.column_mut(c);
            for (s, o) in dst.into_iter().enumerate() {
                let mut acc = 0.0;
                for e in self.in_offsets[s]..self.in_offsets[s + 1] {
                    acc += self.in_weights[e] * src[self.in_sources[e]];
                }
                *o = acc;
            }
        }
        out
    }

    /// Adjoint of [`GraphInput::aggregate`]: `out_t = Σ_{t→s} z_ts g_s`.
    pub(crate) fn aggregate_transpose(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let (rows, cols) = g.shape();
        let mut out = DMatrix::zeros(rows, cols);
        for c in 0..cols {
            let src: Vec<f64> = g.column(c).iter().copied().collect();
            let mut dst = out.column_mut(c);
            for (s, &gs) in src.iter().enumerate() {
                if gs == 0.0 {
                    continue;
                }
                for e in self.in_offsets[s]..self.in_offsets[s + 1] {
                    dst[self.in_sources[e]] += self.in_weights[e] * gs;
                }
            }
        }
        out
    }

    fn scale_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for c in 0..out.ncols() {
            for (v, d) in out.column_mut(c).iter_mut().zip(self.degree.iter()) {
                *v *= d;
            }
        }
        out
    }
}

/// LEConv: `x_s ↦ x_s·W1 + bias + Σ_{t→s} z_ts·(x_s·W2 − x_t·W3)`, activation applied by caller.
#[derive(Clone, Debug, PartialEq)]
pub struct LeConvLayer {
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub w3: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LeConvLayer {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        LeConvLayer {
            w1: DMatrix::zeros(d_in, d_out),
            w2: DMatrix::zeros(d_in, d_out),
            w3: DMatrix::zeros(d_in, d_out),
            bias: DVector::zeros(d_out),
        }
    }

    pub fn random(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        LeConvLayer {
            w1: init_matrix(rng, d_in, d_out),
            w2: init_matrix(rng, d_in, d_out),
            w3: init_matrix(rng, d_in, d_out),
            bias: DVector::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w1.ncols()
    }

    /// Pre-activation output.
    pub fn forward(&self, graph: &GraphInput, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = x * &self.w1;
        add_bias(&mut pre, &self.bias);
        pre += graph.scale_rows(&(x * &self.w2));
        // Aggregate in whichever width is smaller.
        if self.d_out() < self.d_in() {
            pre -= graph.aggregate(&(x * &self.w3));
        } else {
            pre -= graph.aggregate(x) * &self.w3;
        }
        pre
    }

    /// Given `dL/dpre`, accumulates parameter gradients into `grad` and returns `dL/dx` when
    /// `want_input_grad` is set.
    pub fn backward(
        &self,
        graph: &GraphInput,
        x: &DMatrix<f64>,
        d_pre: &DMatrix<f64>,
        grad: &mut LeConvLayer,
        want_input_grad: bool,
    ) -> Option<DMatrix<f64>> {
        let xt = x.transpose();
        let scaled = graph.scale_rows(d_pre);
        let agg_t = graph.aggregate_transpose(d_pre);
        grad.w1 += &xt * d_pre;
        grad.w2 += &xt * &scaled;
        grad.w3 -= &xt * &agg_t;
        for (b, col) in grad.bias.iter_mut().zip(d_pre.column_iter()) {
            *b += col.sum();
        }
        want_input_grad.then(|| {
            let mut dx = d_pre * self.w1.transpose();
            dx += &scaled * self.w2.transpose();
            dx -= &agg_t * self.w3.transpose();
            dx
        })
    }
}

/// Fully connected layer `x ↦ x·W + b` on row-stacked inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DenseLayer {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        DenseLayer {
            w: DMatrix::zeros(d_in, d_out),
            bias: DVector::zeros(d_out),
        }
    }

    pub fn random(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        DenseLayer {
            w: init_matrix(rng, d_in, d_out),
            bias: DVector::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = x * &self.w;
        add_bias(&mut pre, &self.bias);
        pre
    }

    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        d_pre: &DMatrix<f64>,
        grad: &mut DenseLayer,
        want_input_grad: bool,
    ) -> Option<DMatrix<f64>> {
        grad.w += x.transpose() * d_pre;
        for (b, col) in grad.bias.iter_mut().zip(d_pre.column_iter()) {
            *b += col.sum();
        }
        want_input_grad.then(|| d_pre * self.w.transpose())
    }
}

fn add_bias(pre: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for (mut col, b) in pre.column_iter_mut().zip(bias.iter()) {
        col.add_scalar_mut(*b);
    }
}

pub(crate) fn apply_leaky(pre: &DMatrix<f64>) -> DMatrix<f64> {
    pre.map(leaky_relu)
}

/// `d_out ⊙ leaky'(pre)`.
pub(crate) fn leaky_backward(pre: &DMatrix<f64>, d_out: &DMatrix<f64>) -> DMatrix<f64> {
    pre.zip_map(d_out, |p, g| g * leaky_relu_grad(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn two_node_graph(z: f64) -> GraphInput {
        let g = BipartiteQPGraph {
            n: 1,
            m: 1,
            var_features: vec![[1.0, 0.0, 0.0]],
            con_features: vec![[2.0, 1.0, 1.0]],
            edges_w: vec![],
            edges_c: vec![Edge { source: 1, target: 0, weight: z }],
        };
        GraphInput::from_graph(&g)
    }

    #[test]
    fn scalar_leconv_hand_value() {
        // x_s = 1, x_t = 2, z = 3, all weights 1: 1 + 3·(1 − 2) = −2.
        let graph = two_node_graph(3.0);
        let layer = LeConvLayer {
            w1: DMatrix::from_element(1, 1, 1.0),
            w2: DMatrix::from_element(1, 1, 1.0),
            w3: DMatrix::from_element(1, 1, 1.0),
            bias: DVector::zeros(1),
        };
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let pre = layer.forward(&graph, &x);
        assert_eq!(pre[(0, 0)], -2.0);
        assert!((leaky_relu(pre[(0, 0)]) + 0.2).abs() < 1e-15);
        // Node 1 has no in-edges: plain x·W1.
        assert_eq!(pre[(1, 0)], 2.0);
    }

    #[test]
    fn identity_configuration_passes_nonnegative_features() {
        let graph = two_node_graph(0.7);
        let mut layer = LeConvLayer::zeros(3, 3);
        layer.w1 = DMatrix::identity(3, 3);
        let x = DMatrix::from_row_slice(2, 3, &[0.5, 0.0, 1.0, 2.0, 3.0, 0.25]);
        assert_eq!(apply_leaky(&layer.forward(&graph, &x)), x);
    }

    #[test]
    fn aggregate_adjoint_identity() {
        let graph = two_node_graph(1.5);
        let batch = GraphInput::batch(&[&graph, &two_node_graph(-0.5)]);
        assert_eq!(batch.num_nodes(), 4);
        assert_eq!(batch.constraint_nodes, vec![1, 3]);
        assert_eq!(batch.graph_spans, vec![(0, 1), (1, 1)]);
        let x = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        let g = DMatrix::from_fn(4, 2, |i, j| (i + 3 * j) as f64 * 0.25);
        // ⟨A x, g⟩ = ⟨x, Aᵀ g⟩
        let lhs = batch.aggregate(&x).dot(&g);
        let rhs = x.dot(&batch.aggregate_transpose(&g));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
