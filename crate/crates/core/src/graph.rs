//! Bipartite graph encoding of a QP.
//!
//! Nodes `0..n` are variables with features `(fᵢ, 0, 0)`; nodes `n..n+m` are constraints with
//! features `(bⱼ, +1, 1)`. Every nonzero `H[s][t]` gives a directed variable edge `s → t`
//! (one self-loop per nonzero diagonal entry) and every nonzero `A[j][i]` gives the pair
//! `cⱼ → vᵢ`, `vᵢ → cⱼ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{check_permutation, QuadraticProgram};

pub const FEATURE_WIDTH: usize = 3;

/// Direction code for a `≤` row.
pub const LESS_EQUAL: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteQPGraph {
    pub n: usize,
    pub m: usize,
    pub var_features: Vec<[f64; FEATURE_WIDTH]>,
    pub con_features: Vec<[f64; FEATURE_WIDTH]>,
    pub edges_w: Vec<Edge>,
    pub edges_c: Vec<Edge>,
}

impl BipartiteQPGraph {
    pub fn from_qp(qp: &QuadraticProgram) -> Self {
        let (n, m) = (qp.n(), qp.m());
        let var_features = qp.f.iter().map(|&f| [f, 0.0, 0.0]).collect();
        let con_features = qp.b.iter().map(|&b| [b, LESS_EQUAL, 1.0]).collect();
        let mut edges_w = Vec::new();
        for s in 0..n {
            for t in 0..n {
                let weight = qp.h[(s, t)];
                if weight != 0.0 {
                    edges_w.push(Edge { source: s, target: t, weight });
                }
            }
        }
        let mut edges_c = Vec::new();
        for j in 0..m {
            for i in 0..n {
                let weight = qp.a[(j, i)];
                if weight != 0.0 {
                    edges_c.push(Edge { source: n + j, target: i, weight });
                    edges_c.push(Edge { source: i, target: n + j, weight });
                }
            }
        }
        BipartiteQPGraph {
            n,
            m,
            var_features,
            con_features,
            edges_w,
            edges_c,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n + self.m
    }

    /// Node features stacked variables first, `(n + m) × 3`.
    pub fn node_features(&self) -> DMatrix<f64> {
        let rows: Vec<&[f64; FEATURE_WIDTH]> =
            self.var_features.iter().chain(&self.con_features).collect();
        DMatrix::from_fn(rows.len(), FEATURE_WIDTH, |i, j| rows[i][j])
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges_w.iter().chain(&self.edges_c)
    }

    /// Relabels constraint nodes so that new constraint `i` is old constraint `perm[i]`.
    pub fn permute_constraints(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.m)?;
        let n = self.n;
        let mut new_of_old = vec![0; self.m];
        for (new, &old) in perm.iter().enumerate() {
            new_of_old[old] = new;
        }
        let relabel = |node: usize| if node >= n { n + new_of_old[node - n] } else { node };
        let mut edges_c: Vec<Edge> = self
            .edges_c
            .iter()
            .map(|e| Edge {
                source: relabel(e.source),
                target: relabel(e.target),
                weight: e.weight,
            })
            .collect();
        // Canonical order: by constraint, then variable, constraint-to-variable first.
        edges_c.sort_by_key(|e| {
            let (con, var, dir) = if e.source >= n {
                (e.source, e.target, 0)
            } else {
                (e.target, e.source, 1)
            };
            (con, var, dir)
        });
        Ok(BipartiteQPGraph {
            n,
            m: self.m,
            var_features: self.var_features.clone(),
            con_features: perm.iter().map(|&old| self.con_features[old]).collect(),
            edges_w: self.edges_w.clone(),
            edges_c,
        })
    }

    /// Rebuilds `(H, f, A, b)` from edge weights and node features.
    pub fn to_qp(&self) -> Result<QuadraticProgram> {
        let (n, m) = (self.n, self.m);
        let mut h = DMatrix::zeros(n, n);
        for e in &self.edges_w {
            if e.source >= n || e.target >= n {
                return Err(Error::Dimension(format!("variable edge {e:?} out of range")));
            }
            h[(e.source, e.target)] = e.weight;
        }
        let mut a = DMatrix::zeros(m, n);
        for e in &self.edges_c {
            let (con, var) = if e.source >= n { (e.source, e.target) } else { (e.target, e.source) };
            if con < n || con >= n + m || var >= n {
                return Err(Error::Dimension(format!("constraint edge {e:?} out of range")));
            }
            a[(con - n, var)] = e.weight;
        }
        let f = DVector::from_iterator(n, self.var_features.iter().map(|x| x[0]));
        let b = DVector::from_iterator(m, self.con_features.iter().map(|x| x[0] * x[1]));
        QuadraticProgram::new(h, f, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::fixtures::two_by_three;
    use proptest::prelude::*;

    #[test]
    fn two_by_three_graph() {
        let g = BipartiteQPGraph::from_qp(&two_by_three());
        assert_eq!(g.var_features, vec![[-4.0, 0.0, 0.0], [-8.0, 0.0, 0.0]]);
        assert_eq!(
            g.con_features,
            vec![[3.0, 1.0, 1.0], [0.0, 1.0, 1.0], [10.0, 1.0, 1.0]]
        );
        let loops: Vec<f64> = g.edges_w.iter().filter(|e| e.source == e.target).map(|e| e.weight).collect();
        assert_eq!(loops, vec![2.0, 2.0]);
        let cross: Vec<&Edge> = g.edges_w.iter().filter(|e| e.source != e.target).collect();
        assert_eq!(cross.len(), 2);
        assert!(cross.iter().all(|e| e.weight == 1.0));
        // c₃ (node 4) to v₁ (node 0) carries -3.
        assert!(g.edges_c.contains(&Edge { source: 4, target: 0, weight: -3.0 }));
        assert!(g.edges_c.contains(&Edge { source: 0, target: 4, weight: -3.0 }));
        assert_eq!(g.edges_c.len(), 12);
        assert_eq!(g.num_nodes(), 5);
    }

    #[test]
    fn diagonal_h_and_zero_a() {
        let qp = QuadraticProgram::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DVector::zeros(3),
            DMatrix::zeros(2, 3),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let g = BipartiteQPGraph::from_qp(&qp);
        assert!(g.edges_c.is_empty());
        assert_eq!(g.edges_w.len(), 3);
        assert!(g.edges_w.iter().all(|e| e.source == e.target));
    }

    #[test]
    fn dense_edge_counts() {
        let (n, m) = (4, 5);
        let qp = QuadraticProgram::new(
            DMatrix::from_fn(n, n, |i, j| 1.0 + (i + j) as f64),
            DVector::zeros(n),
            DMatrix::from_fn(m, n, |i, j| 1.0 + (i * n + j) as f64),
            DVector::zeros(m),
        )
        .unwrap();
        let g = BipartiteQPGraph::from_qp(&qp);
        // n self-loops plus 2·C(n, 2) directed off-diagonal edges.
        assert_eq!(g.edges_w.len(), n + 2 * (n * (n - 1) / 2));
        assert_eq!(g.edges_c.len(), 2 * m * n);
    }

    #[test]
    fn permutation_identity_swap_and_reverse() {
        let qp = two_by_three();
        let g = BipartiteQPGraph::from_qp(&qp);
        assert_eq!(g.permute_constraints(&[0, 1, 2]).unwrap(), g);

        let swap = [1, 0, 2];
        let lhs = BipartiteQPGraph::from_qp(&qp.permute_constraints(&swap).unwrap());
        assert_eq!(lhs, g.permute_constraints(&swap).unwrap());

        let rev = [2, 1, 0];
        let twice = g.permute_constraints(&rev).unwrap().permute_constraints(&rev).unwrap();
        assert_eq!(twice, g);

        assert!(matches!(g.permute_constraints(&[0, 0, 1]), Err(Error::InvalidPermutation(_))));
        assert!(matches!(g.permute_constraints(&[0, 1]), Err(Error::InvalidPermutation(_))));
    }

    fn arb_qp() -> impl Strategy<Value = (QuadraticProgram, Vec<usize>)> {
        (1usize..5, 1usize..6).prop_flat_map(|(n, m)| {
            let sparse = prop_oneof![Just(0.0), -2.0..2.0f64];
            (
                prop::collection::vec(sparse.clone(), n * n),
                prop::collection::vec(-2.0..2.0f64, n),
                prop::collection::vec(sparse, m * n),
                prop::collection::vec(-2.0..2.0f64, m),
                Just((0..m).collect::<Vec<_>>()).prop_shuffle(),
            )
                .prop_map(move |(h, f, a, b, perm)| {
                    let g = DMatrix::from_vec(n, n, h);
                    let qp = QuadraticProgram::new(
                        &g * g.transpose(),
                        DVector::from_vec(f),
                        DMatrix::from_vec(m, n, a),
                        DVector::from_vec(b),
                    )
                    .unwrap();
                    (qp, perm)
                })
        })
    }

    proptest! {
        #[test]
        fn encoding_is_lossless_and_natural((qp, perm) in arb_qp()) {
            let g = BipartiteQPGraph::from_qp(&qp);
            prop_assert_eq!(g.to_qp().unwrap(), qp.clone());
            let permuted = qp.permute_constraints(&perm).unwrap();
            prop_assert_eq!(
                BipartiteQPGraph::from_qp(&permuted),
                g.permute_constraints(&perm).unwrap()
            );
            // H-edges come in symmetric pairs.
            for e in &g.edges_w {
                prop_assert!(g.edges_w.iter().any(|r| r.source == e.target && r.target == e.source && r.weight == e.weight));
            }
        }
    }
}
