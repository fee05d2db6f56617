//! WebAssembly bindings for the demo page in `www/`.
//!
//! Exports take and return JSON strings. The logic sits in plain functions ([`solve_run`],
//! [`graph_view`], [`compare_runs`]) so it can be tested without a browser.

use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;
use warmstart_qp::graph::BipartiteQPGraph;
use warmstart_qp::solver::{solve_traced, SolverOptions, WorkingSet};
use warmstart_qp::{QpRecord, QuadraticProgram};

#[derive(Debug, Serialize)]
pub struct Step {
    pub working_set: Vec<usize>,
    pub x: Vec<f64>,
    pub dual_objective: f64,
}

#[derive(Debug, Serialize)]
pub struct Run {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub status: String,
    /// Iterate at the start of every outer pass, then the final point.
    pub steps: Vec<Step>,
}

#[derive(Debug, Serialize)]
pub struct Node {
    pub id: usize,
    pub kind: &'static str,
    pub label: String,
    pub features: [f64; 3],
}

#[derive(Debug, Serialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub kind: &'static str,
}

#[derive(Debug, Serialize)]
pub struct GraphView {
    pub n: usize,
    pub m: usize,
    pub nodes: Vec<Node>,
    /// One entry per undirected edge; `H` edges include self-loops.
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub cold: Run,
    pub warm: Run,
}

pub fn parse_qp(json: &str) -> Result<QuadraticProgram, String> {
    let rec: QpRecord = serde_json::from_str(json).map_err(|e| format!("QP JSON: {e}"))?;
    rec.to_qp().map_err(|e| e.to_string())
}

/// Indices separated by commas or whitespace; empty text is the empty set.
pub fn parse_set(text: &str) -> Result<Vec<usize>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("working set: `{t}` is not an index")))
        .collect()
}

pub fn solve_run(qp: &QuadraticProgram, warm: &[usize]) -> Result<Run, String> {
    let df = qp.to_dual().map_err(|e| e.to_string())?;
    let w0 = WorkingSet::from_indices(warm.to_vec(), qp.m()).map_err(|e| e.to_string())?;
    let (sol, trace) = solve_traced(&df, &w0, &DVector::zeros(qp.m()), &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let mut steps: Vec<Step> = trace
        .into_iter()
        .map(|t| Step {
            working_set: t.working_set,
            x: t.x.iter().copied().collect(),
            dual_objective: t.dual_objective,
        })
        .collect();
    steps.push(Step {
        working_set: sol.active_set.clone(),
        x: sol.x.iter().copied().collect(),
        dual_objective: df.dual_objective(&sol.lambda),
    });
    Ok(Run {
        x: sol.x.iter().copied().collect(),
        lambda: sol.lambda.iter().copied().collect(),
        active_set: sol.active_set,
        objective: qp.objective(&sol.x),
        iterations: sol.iterations,
        status: sol.status.to_string(),
        steps,
    })
}

pub fn graph_view(qp: &QuadraticProgram) -> GraphView {
    let g = BipartiteQPGraph::from_qp(qp);
    let mut nodes: Vec<Node> = g
        .var_features
        .iter()
        .enumerate()
        .map(|(i, f)| Node { id: i, kind: "variable", label: format!("x{}", i + 1), features: *f })
        .collect();
    nodes.extend(g.con_features.iter().enumerate().map(|(j, f)| Node {
        id: g.n + j,
        kind: "constraint",
        label: format!("c{}", j + 1),
        features: *f,
    }));
    let mut edges: Vec<GraphEdge> = g
        .edges_w
        .iter()
        .filter(|e| e.source <= e.target)
        .map(|e| GraphEdge { source: e.source, target: e.target, weight: e.weight, kind: "H" })
        .collect();
    edges.extend(
        g.edges_c
            .iter()
            .filter(|e| e.source >= g.n)
            .map(|e| GraphEdge { source: e.source, target: e.target, weight: e.weight, kind: "A" }),
    );
    GraphView { n: g.n, m: g.m, nodes, edges }
}

pub fn compare_runs(qp: &QuadraticProgram, warm: &[usize]) -> Result<Comparison, String> {
    Ok(Comparison { cold: solve_run(qp, &[])?, warm: solve_run(qp, warm)? })
}

fn to_json(v: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Solves the QP from `warm_set` (comma-separated, may be empty) and returns the run with its
/// iterates.
#[wasm_bindgen]
pub fn solve(qp_json: &str, warm_set: &str) -> Result<String, JsError> {
    js((|| to_json(&solve_run(&parse_qp(qp_json)?, &parse_set(warm_set)?)?))())
}

/// Nodes and edges of the bipartite graph.
#[wasm_bindgen]
pub fn graph(qp_json: &str) -> Result<String, JsError> {
    js(parse_qp(qp_json).and_then(|qp| to_json(&graph_view(&qp))))
}

/// Cold run and a run warm-started from `warm_set`.
#[wasm_bindgen]
pub fn compare(qp_json: &str, warm_set: &str) -> Result<String, JsError> {
    js((|| to_json(&compare_runs(&parse_qp(qp_json)?, &parse_set(warm_set)?)?))())
}
