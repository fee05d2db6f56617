//! Dual active-set QP solving with warm starts predicted by a graph neural network.
//!
//! The pipeline: [`qp`] holds problem data and the dual transform, [`solver`] runs the dual
//! active-set iteration, [`graph`] encodes a QP as a bipartite graph, [`nn`] learns to predict
//! active constraints from that graph, [`datagen`] produces labeled datasets and [`eval`] compares
//! cold and warm starts.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod nn;
pub mod qp;
pub mod solver;

pub use error::{Error, Result};
pub use qp::{DualFactors, ParametricQP, QpRecord, QuadraticProgram, Solution, SolveStatus};
pub use solver::{SolverOptions, WorkingSet};
