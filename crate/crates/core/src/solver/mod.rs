//! Dual active-set method on `min ½λᵀMMᵀλ + dᵀλ, λ ≥ 0`.
//!
//! Each pass of the outer loop either terminates or changes the working set by exactly one
//! constraint: a blocking constraint is appended when the primal iterate is infeasible, and a
//! constraint is dropped via [`fix_component`] when the equality-constrained multipliers lose
//! dual feasibility or the working-set Gram matrix becomes singular.

mod ldl;

pub use ldl::LdlFactor;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{DualFactors, Solution, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Outer-loop cap; `None` means `10·(n + m)`.
    pub max_iterations: Option<usize>,
    /// Multipliers with `λ ≥ -dual_feas_tol` count as dual feasible.
    pub dual_feas_tol: f64,
    /// Slacks with `μ ≥ -primal_feas_tol` count as primal feasible.
    pub primal_feas_tol: f64,
    /// Relative pivot threshold on the diagonal of `D`.
    pub singularity_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: None,
            dual_feas_tol: 1e-10,
            primal_feas_tol: 1e-8,
            singularity_tol: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn iteration_cap(&self, n: usize, m: usize) -> usize {
        self.max_iterations.unwrap_or(10 * (n + m)).max(1)
    }

    fn check(&self) -> Result<()> {
        let tols = [
            ("dual_feas_tol", self.dual_feas_tol),
            ("primal_feas_tol", self.primal_feas_tol),
            ("singularity_tol", self.singularity_tol),
        ];
        for (name, tol) in tols {
            if !(tol > 0.0) {
                return Err(Error::field(name, "must be positive"));
            }
        }
        if self.max_iterations == Some(0) {
            return Err(Error::field("max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Constraint indices in insertion order; the last-added constraint sits at the end.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkingSet {
    indices: Vec<usize>,
}

impl WorkingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_indices(indices: Vec<usize>, m: usize) -> Result<Self> {
        let mut seen = vec![false; m];
        for &i in &indices {
            if i >= m {
                return Err(Error::InvalidWarmStart(format!("index {i} >= m = {m}")));
            }
            if seen[i] {
                return Err(Error::InvalidWarmStart(format!("index {i} repeated")));
            }
            seen[i] = true;
        }
        Ok(WorkingSet { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }

    pub fn position(&self, i: usize) -> Option<usize> {
        self.indices.iter().position(|&j| j == i)
    }

    fn push(&mut self, i: usize) {
        self.indices.push(i);
    }

    fn remove_at(&mut self, position: usize) -> usize {
        self.indices.remove(position)
    }

    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }
}

/// Steps `λ ← λ - (λ_j/p_j)·p` with `j = argmin_{i∈B} -λ_i/p_i` (lowest index on ties), pins
/// `λ_j = 0`, and drops `j` from the working set. Returns `j`.
///
/// `lambda` and `p` are indexed by constraint; `blocking` must be a nonempty subset of `w` with
/// `p_i < 0` on it.
pub fn fix_component(
    lambda: &mut DVector<f64>,
    w: &mut WorkingSet,
    blocking: &[usize],
    p: &DVector<f64>,
) -> Result<usize> {
    fix_component_at(lambda, w, blocking, p).map(|(j, _)| j)
}

/// [`fix_component`] that also reports the working-set position `j` occupied before removal.
fn fix_component_at(
    lambda: &mut DVector<f64>,
    w: &mut WorkingSet,
    blocking: &[usize],
    p: &DVector<f64>,
) -> Result<(usize, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for &i in blocking {
        let ratio = -lambda[i] / p[i];
        match best {
            Some((bi, br)) if ratio > br || (ratio == br && i > bi) => {}
            _ => best = Some((i, ratio)),
        }
    }
    let (j, _) = best.ok_or(Error::EmptyBlockingSet)?;
    let position = w.position(j).ok_or_else(|| {
        Error::InvalidWarmStart(format!("blocking index {j} not in working set"))
    })?;
    let step = lambda[j] / p[j];
    for &i in w.indices() {
        lambda[i] -= step * p[i];
    }
    lambda[j] = 0.0;
    w.remove_at(position);
    Ok((j, position))
}

/// `x = -R⁻¹(M_Wᵀλ_W + v)`.
pub fn recover_primal(df: &DualFactors, lambda: &DVector<f64>, w: &WorkingSet) -> DVector<f64> {
    let mut u = df.v.clone();
    for &i in w.indices() {
        u.axpy(lambda[i], &df.m.row(i).transpose(), 1.0);
    }
    -(&df.r_inv * u)
}

/// One outer-loop pass, recorded by [`solve_traced`].
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    /// Working set at the start of the pass, insertion order.
    pub working_set: Vec<usize>,
    /// Dual objective of the multipliers at the start of the pass.
    pub dual_objective: f64,
    /// Primal point implied by those multipliers.
    pub x: DVector<f64>,
}

/// Per-solve statistics in their JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub status: SolveStatus,
    pub solve_seconds: f64,
    pub warm_set_size: usize,
}

pub fn solve(
    df: &DualFactors,
    w0: &WorkingSet,
    lambda0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<Solution> {
    DualActiveSet::new(df, w0, lambda0, opts)?.run(None)
}

/// Cold start: empty working set, zero multipliers.
pub fn solve_cold(df: &DualFactors, opts: &SolverOptions) -> Result<Solution> {
    solve(df, &WorkingSet::new(), &DVector::zeros(df.num_constraints()), opts)
}

/// Warm start from a predicted working set with zero multipliers.
pub fn solve_warm(df: &DualFactors, indices: &[usize], opts: &SolverOptions) -> Result<Solution> {
    let w0 = WorkingSet::from_indices(indices.to_vec(), df.num_constraints())?;
    solve(df, &w0, &DVector::zeros(df.num_constraints()), opts)
}

pub fn solve_traced(
    df: &DualFactors,
    w0: &WorkingSet,
    lambda0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<(Solution, Vec<TraceStep>)> {
    let mut trace = Vec::new();
    let sol = DualActiveSet::new(df, w0, lambda0, opts)?.run(Some(&mut trace))?;
    Ok((sol, trace))
}

struct DualActiveSet<'a> {
    df: &'a DualFactors,
    opts: SolverOptions,
    w: WorkingSet,
    lambda: DVector<f64>,
    factor: LdlFactor,
}

impl<'a> DualActiveSet<'a> {
    fn new(
        df: &'a DualFactors,
        w0: &WorkingSet,
        lambda0: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<Self> {
        opts.check()?;
        let m = df.num_constraints();
        if df.d.len() != m || df.v.len() != df.n() || df.r_inv.nrows() != df.n() {
            return Err(Error::Dimension("dual factors disagree in shape".into()));
        }
        if lambda0.len() != m {
            return Err(Error::Dimension(format!("lambda0 has length {}, m = {m}", lambda0.len())));
        }
        // Re-validate so callers cannot smuggle in out-of-range indices.
        let w0 = WorkingSet::from_indices(w0.indices().to_vec(), m)?;
        for (i, &l) in lambda0.iter().enumerate() {
            if l < 0.0 || !l.is_finite() {
                return Err(Error::InvalidWarmStart(format!("lambda0[{i}] = {l} is negative")));
            }
            if l != 0.0 && !w0.contains(i) {
                return Err(Error::InvalidWarmStart(format!(
                    "lambda0[{i}] = {l} is supported outside the working set"
                )));
            }
        }

        let mut solver = DualActiveSet {
            df,
            opts: *opts,
            w: WorkingSet::new(),
            lambda: lambda0.clone(),
            factor: LdlFactor::new(),
        };
        // Rows that are linearly dependent on earlier ones are dropped from the initial working
        // set; with zero multipliers this does not change the iterate.
        for &i in w0.indices() {
            solver.append(i);
            if solver.last_pivot_singular() {
                if lambda0[i] != 0.0 {
                    return Err(Error::InvalidWarmStart(format!(
                        "constraint {i} is linearly dependent on the working set but has a \
                         nonzero multiplier"
                    )));
                }
                solver.factor.remove(solver.w.len() - 1);
                solver.w.remove_at(solver.w.len() - 1);
            }
        }
        Ok(solver)
    }

    fn gram(&self, i: usize, j: usize) -> f64 {
        self.df.m.row(i).dot(&self.df.m.row(j))
    }

    fn append(&mut self, j: usize) {
        let row: Vec<f64> = self
            .w
            .indices()
            .iter()
            .map(|&i| self.gram(j, i))
            .chain(std::iter::once(self.gram(j, j)))
            .collect();
        self.factor.append(&row);
        self.w.push(j);
    }

    /// More than `n` rows are always dependent, whatever rounding did to the pivot.
    fn over_full(&self) -> bool {
        self.w.len() > self.df.n()
    }

    fn last_pivot_singular(&self) -> bool {
        if self.over_full() {
            return true;
        }
        match self.factor.d().last() {
            Some(&d) => d <= self.factor.pivot_threshold(self.opts.singularity_tol),
            None => false,
        }
    }

    fn drop_constraint(&mut self, blocking: &[usize], p: &DVector<f64>) -> Result<()> {
        let (_, position) = fix_component_at(&mut self.lambda, &mut self.w, blocking, p)?;
        self.factor.remove(position);
        for &i in self.w.indices() {
            if self.lambda[i] < 0.0 {
                self.lambda[i] = 0.0;
            }
        }
        Ok(())
    }

    fn finish(&self, iterations: usize, status: SolveStatus) -> Solution {
        Solution {
            x: recover_primal(self.df, &self.lambda, &self.w),
            lambda: self.lambda.clone(),
            active_set: self.w.sorted(),
            iterations,
            status,
        }
    }

    fn run(mut self, mut trace: Option<&mut Vec<TraceStep>>) -> Result<Solution> {
        let m = self.df.num_constraints();
        let cap = self.opts.iteration_cap(self.df.n(), m);
        let mut iterations = 0;
        loop {
            if iterations >= cap {
                return Ok(self.finish(iterations, SolveStatus::IterationLimit));
            }
            iterations += 1;
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(TraceStep {
                    working_set: self.w.indices().to_vec(),
                    dual_objective: self.df.dual_objective(&self.lambda),
                    x: recover_primal(self.df, &self.lambda, &self.w),
                });
            }

            let d_w: Vec<f64> = self.w.indices().iter().map(|&i| self.df.d[i]).collect();
            let singular = if self.over_full() {
                Some(self.factor.null_direction(&d_w))
            } else {
                self.factor.detect_singular(self.opts.singularity_tol, &d_w)
            };
            if let Some(p_w) = singular {
                let mut p = DVector::zeros(m);
                for (&i, &pi) in self.w.indices().iter().zip(&p_w) {
                    p[i] = pi;
                }
                let blocking: Vec<usize> =
                    self.w.indices().iter().copied().filter(|&i| p[i] < 0.0).collect();
                if blocking.is_empty() {
                    return Ok(self.finish(iterations, SolveStatus::PrimalInfeasible));
                }
                self.drop_constraint(&blocking, &p)?;
                continue;
            }

            let rhs: Vec<f64> = d_w.iter().map(|d| -d).collect();
            // Dependence was judged when each row was appended. The relative threshold grows
            // with later pivots, so only a non-positive pivot is rejected here.
            let lambda_star_w = self.factor.solve(&rhs, 0.0)?;
            let dual_feasible = lambda_star_w.iter().all(|&l| l >= -self.opts.dual_feas_tol);
            if dual_feasible {
                self.lambda.fill(0.0);
                for (&i, &l) in self.w.indices().iter().zip(&lambda_star_w) {
                    self.lambda[i] = l.max(0.0);
                }
                let u = {
                    let mut u = DVector::zeros(self.df.n());
                    for (&i, &l) in self.w.indices().iter().zip(&lambda_star_w) {
                        u.axpy(l, &self.df.m.row(i).transpose(), 1.0);
                    }
                    u
                };
                let mut blocking: Option<(usize, f64)> = None;
                for i in 0..m {
                    if self.w.contains(i) {
                        continue;
                    }
                    let mu = self.df.m.row(i).transpose().dot(&u) + self.df.d[i];
                    if blocking.is_none_or(|(_, best)| mu < best) {
                        blocking = Some((i, mu));
                    }
                }
                match blocking {
                    Some((j, mu)) if mu < -self.opts.primal_feas_tol => self.append(j),
                    _ => return Ok(self.finish(iterations, SolveStatus::Optimal)),
                }
            } else {
                let mut p = DVector::zeros(m);
                let mut blocking = Vec::new();
                for (&i, &l) in self.w.indices().iter().zip(&lambda_star_w) {
                    p[i] = l - self.lambda[i];
                    if l < -self.opts.dual_feas_tol {
                        blocking.push(i);
                    }
                }
                self.drop_constraint(&blocking, &p)?;
            }
        }
    }
}
