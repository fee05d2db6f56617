//! Dense convex QP data: `minimize ½xᵀHx + fᵀx  subject to  Ax ≤ b`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_upper, upper_triangular_inverse};

/// Absolute tolerance on `|H - Hᵀ|` entries.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Largest constraint count accepted by [`kkt_oracle`].
pub const ORACLE_MAX_CONSTRAINTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Dimension(String),
    NotSymmetric { max_asymmetry: f64 },
    NotPositiveDefinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Violation::NotSymmetric { max_asymmetry } => {
                write!(f, "not symmetric (max |H - Hᵀ| = {max_asymmetry:e})")
            }
            Violation::NotPositiveDefinite => write!(f, "not positive definite"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl QuadraticProgram {
    /// Builds a QP after checking that all shapes agree. Symmetry and definiteness are left to
    /// [`QuadraticProgram::validate`].
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let qp = QuadraticProgram { h, f, a, b };
        if let Some(msg) = qp.shape_error() {
            return Err(Error::Dimension(msg));
        }
        Ok(qp)
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    fn shape_error(&self) -> Option<String> {
        let n = self.h.nrows();
        if self.h.ncols() != n {
            return Some(format!("H is {}x{}", n, self.h.ncols()));
        }
        if self.f.len() != n {
            return Some(format!("f has length {}, expected {n}", self.f.len()));
        }
        if self.a.ncols() != n {
            return Some(format!("A has {} columns, expected {n}", self.a.ncols()));
        }
        if self.b.len() != self.a.nrows() {
            return Some(format!("b has length {}, expected {}", self.b.len(), self.a.nrows()));
        }
        None
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if let Some(msg) = self.shape_error() {
            violations.push(Violation::Dimension(msg));
            // Further checks assume a square H.
            if self.h.nrows() != self.h.ncols() {
                return ValidationReport { violations };
            }
        }
        let n = self.n();
        let mut max_asymmetry = 0.0_f64;
        for i in 0..n {
            for j in 0..i {
                max_asymmetry = max_asymmetry.max((self.h[(i, j)] - self.h[(j, i)]).abs());
            }
        }
        if max_asymmetry > SYMMETRY_TOL {
            violations.push(Violation::NotSymmetric { max_asymmetry });
        }
        let sym = (&self.h + self.h.transpose()) * 0.5;
        if cholesky_upper(&sym).is_err() {
            violations.push(Violation::NotPositiveDefinite);
        }
        ValidationReport { violations }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// `Ax - b`; nonpositive entries are satisfied constraints.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    pub fn active_set_of(&self, x: &DVector<f64>, tol: f64) -> Vec<usize> {
        self.residual(x)
            .iter()
            .enumerate()
            .filter(|(_, r)| r.abs() <= tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Transformation to the dual data consumed by the active-set solver:
    /// `H = RᵀR`, `M = AR⁻¹`, `v = R⁻ᵀf`, `d = b + Mv`.
    pub fn to_dual(&self) -> Result<DualFactors> {
        let r = cholesky_upper(&self.h)?;
        let r_inv = upper_triangular_inverse(&r);
        let m = &self.a * &r_inv;
        let v = r_inv.tr_mul(&self.f);
        let d = &self.b + &m * &v;
        Ok(DualFactors { m, d, v, r_inv })
    }

    /// Reorders constraints so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_constraints(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.m())?;
        let a = DMatrix::from_fn(self.m(), self.n(), |i, j| self.a[(perm[i], j)]);
        let b = DVector::from_fn(self.m(), |i, _| self.b[perm[i]]);
        Ok(QuadraticProgram {
            h: self.h.clone(),
            f: self.f.clone(),
            a,
            b,
        })
    }
}

pub(crate) fn check_permutation(perm: &[usize], len: usize) -> Result<()> {
    if perm.len() != len {
        return Err(Error::InvalidPermutation(format!(
            "length {} != {len}",
            perm.len()
        )));
    }
    let mut seen = vec![false; len];
    for &p in perm {
        if p >= len || seen[p] {
            return Err(Error::InvalidPermutation(format!("index {p} repeated or out of range")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Parametric family with fixed `H`, `A`:
/// `f(η) = f̂ + Fη`, `b(η) = b̂ + ATη`, so `x = Tη` is feasible whenever `b̂ ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricQP {
    pub h: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub f_hat: DVector<f64>,
    pub f_mat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub t_mat: DMatrix<f64>,
}

impl ParametricQP {
    pub fn p(&self) -> usize {
        self.f_mat.ncols()
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn instantiate(&self, eta: &DVector<f64>) -> Result<QuadraticProgram> {
        let p = self.p();
        if eta.len() != p || self.t_mat.ncols() != p {
            return Err(Error::Dimension(format!(
                "eta has length {}, F and T expect {p}",
                eta.len()
            )));
        }
        let f = &self.f_hat + &self.f_mat * eta;
        let b = &self.b_hat + &self.a * (&self.t_mat * eta);
        QuadraticProgram::new(self.h.clone(), f, self.a.clone(), b)
    }
}

/// Dual problem data: `min ½λᵀMMᵀλ + dᵀλ  s.t. λ ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualFactors {
    pub m: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DVector<f64>,
    pub r_inv: DMatrix<f64>,
}

impl DualFactors {
    pub fn n(&self) -> usize {
        self.m.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.m.nrows()
    }

    pub fn dual_objective(&self, lambda: &DVector<f64>) -> f64 {
        let mt_lambda = self.m.tr_mul(lambda);
        0.5 * mt_lambda.norm_squared() + self.d.dot(lambda)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    IterationLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::PrimalInfeasible => "primal_infeasible",
            SolveStatus::IterationLimit => "iteration_limit",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Tolerances used by the enumeration oracle.
const ORACLE_FEAS_TOL: f64 = 1e-9;
const ORACLE_TIGHT_TOL: f64 = 1e-8;
const ORACLE_RANK_TOL: f64 = 1e-12;

/// Ground-truth solution by enumerating candidate active sets `S` with `|S| ≤ n` and solving the
/// equality-constrained KKT system for each. Exponential in `m`; test scale only.
pub fn kkt_oracle(qp: &QuadraticProgram) -> Result<Solution> {
    if qp.m() > ORACLE_MAX_CONSTRAINTS {
        return Err(Error::EnumerationLimit {
            m: qp.m(),
            limit: ORACLE_MAX_CONSTRAINTS,
        });
    }
    let empty = DMatrix::zeros(0, qp.n());
    let (x, _, lambda) = enumerate_kkt(&qp.h, &qp.f, &empty, &DVector::zeros(0), &qp.a, &qp.b)?;
    let active_set = qp.active_set_of(&x, ORACLE_TIGHT_TOL);
    Ok(Solution {
        x,
        lambda,
        active_set,
        iterations: 0,
        status: SolveStatus::Optimal,
    })
}

/// Enumeration oracle for `min ½xᵀHx + fᵀx  s.t.  Eₓ = e, Ax ≤ b`. `H` only needs to be positive
/// definite on the null space of `E`. Returns `(x, ν, λ)` with equality and inequality multipliers.
pub fn kkt_oracle_with_equalities(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    e_mat: &DMatrix<f64>,
    e_rhs: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if a.nrows() > ORACLE_MAX_CONSTRAINTS {
        return Err(Error::EnumerationLimit {
            m: a.nrows(),
            limit: ORACLE_MAX_CONSTRAINTS,
        });
    }
    enumerate_kkt(h, f, e_mat, e_rhs, a, b)
}

fn enumerate_kkt(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    e_mat: &DMatrix<f64>,
    e_rhs: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = h.nrows();
    let m = a.nrows();
    let q = e_mat.nrows();
    if f.len() != n || a.ncols() != n || b.len() != m || e_mat.ncols() != n || e_rhs.len() != q {
        return Err(Error::Dimension("oracle inputs disagree in shape".into()));
    }
    let max_size = n.saturating_sub(q).min(m);
    let mut subset = Vec::with_capacity(max_size);
    for size in 0..=max_size {
        if let Some(found) = for_each_subset(m, size, &mut subset, &mut |s| {
            kkt_candidate(h, f, e_mat, e_rhs, a, b, s)
        }) {
            return Ok(found);
        }
    }
    Err(Error::Infeasible)
}

/// Calls `visit` on every ascending `size`-subset of `0..m` in lexicographic order, stopping at the
/// first `Some`.
fn for_each_subset<T>(
    m: usize,
    size: usize,
    subset: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]) -> Option<T>,
) -> Option<T> {
    if subset.len() == size {
        return visit(subset);
    }
    let start = subset.last().map_or(0, |&i| i + 1);
    let remaining = size - subset.len();
    for i in start..=m.saturating_sub(remaining) {
        if i >= m {
            break;
        }
        subset.push(i);
        let found = for_each_subset(m, size, subset, visit);
        subset.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

fn kkt_candidate(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    e_mat: &DMatrix<f64>,
    e_rhs: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    subset: &[usize],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = h.nrows();
    let q = e_mat.nrows();
    let k = subset.len();
    let dim = n + q + k;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for j in 0..n {
        rhs[j] = -f[j];
    }
    let rows = (0..q)
        .map(|r| (e_mat.row(r).clone_owned(), e_rhs[r]))
        .chain(subset.iter().map(|&i| (a.row(i).clone_owned(), b[i])));
    for (r, (row, rhs_r)) in rows.enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = row[j];
            kkt[(j, n + r)] = row[j];
        }
        rhs[n + r] = rhs_r;
    }
    let sol = linalg::solve_full_rank(kkt, &rhs, ORACLE_RANK_TOL)?;
    let x = sol.rows(0, n).clone_owned();
    let nu = sol.rows(n, q).clone_owned();
    let mut lambda = DVector::zeros(a.nrows());
    for (r, &i) in subset.iter().enumerate() {
        lambda[i] = sol[n + q + r];
    }
    let dual_ok = lambda.iter().all(|&l| l >= -ORACLE_FEAS_TOL);
    let scale = 1.0 + b.amax();
    let primal_ok = (a * &x - b).iter().all(|&r| r <= ORACLE_FEAS_TOL * scale);
    (dual_ok && primal_ok).then_some((x, nu, lambda))
}

/// JSON form of a QP instance. Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpRecord {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_set: Option<Vec<usize>>,
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::field(
            name,
            format!("row {bad} has length {}, expected {ncols}", rows[bad].len()),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl QpRecord {
    pub fn from_qp(qp: &QuadraticProgram, active_set: Option<Vec<usize>>) -> Self {
        QpRecord {
            n: qp.n(),
            m: qp.m(),
            h: matrix_to_rows(&qp.h),
            a: matrix_to_rows(&qp.a),
            f: qp.f.iter().copied().collect(),
            b: qp.b.iter().copied().collect(),
            active_set,
        }
    }

    pub fn to_qp(&self) -> Result<QuadraticProgram> {
        if self.h.len() != self.n {
            return Err(Error::field("H", format!("{} rows, expected n = {}", self.h.len(), self.n)));
        }
        if self.a.len() != self.m {
            return Err(Error::field("A", format!("{} rows, expected m = {}", self.a.len(), self.m)));
        }
        if self.f.len() != self.n {
            return Err(Error::field("f", format!("length {}, expected n = {}", self.f.len(), self.n)));
        }
        if self.b.len() != self.m {
            return Err(Error::field("b", format!("length {}, expected m = {}", self.b.len(), self.m)));
        }
        if let Some(bad) = self.active_set.iter().flatten().find(|&&i| i >= self.m) {
            return Err(Error::field("active_set", format!("index {bad} >= m = {}", self.m)));
        }
        let h = rows_to_matrix(&self.h, self.n, "H")?;
        let a = rows_to_matrix(&self.a, self.n, "A")?;
        QuadraticProgram::new(
            h,
            DVector::from_vec(self.f.clone()),
            a,
            DVector::from_vec(self.b.clone()),
        )
    }
}
