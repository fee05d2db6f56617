//! Small dense kernels shared by the QP transform and the oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold for Cholesky: a pivot `<= PIVOT_TOL * max(diag)` fails.
pub const PIVOT_TOL: f64 = 1e-12;

/// Upper-triangular `R` with positive diagonal such that `h = RᵀR`.
pub fn cholesky_upper(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Dimension(format!("H is {}x{}", n, h.ncols())));
    }
    let scale = (0..n).map(|i| h[(i, i)]).fold(0.0_f64, f64::max);
    let threshold = PIVOT_TOL * scale;
    let mut r = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = h[(j, j)];
        for k in 0..j {
            pivot -= r[(k, j)] * r[(k, j)];
        }
        if !(pivot > threshold) || scale <= 0.0 {
            return Err(Error::NotPositiveDefinite { row: j, pivot });
        }
        let rjj = pivot.sqrt();
        r[(j, j)] = rjj;
        for i in j + 1..n {
            let mut s = h[(j, i)];
            for k in 0..j {
                s -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = s / rjj;
        }
    }
    Ok(r)
}

/// Inverse of an upper-triangular matrix with nonzero diagonal. The result is upper triangular
/// with exact zeros below the diagonal.
pub fn upper_triangular_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in i + 1..=j {
                s += r[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / r[(i, i)];
        }
    }
    inv
}

/// Solve a square system with full pivoting, rejecting numerically rank-deficient matrices.
pub(crate) fn solve_full_rank(a: DMatrix<f64>, rhs: &DVector<f64>, rel_tol: f64) -> Option<DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let lu = a.full_piv_lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min <= rel_tol * max {
        return None;
    }
    lu.solve(rhs)
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
