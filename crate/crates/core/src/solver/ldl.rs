//! Incremental `LDLᵀ` factorization of the working-set Gram matrix `M_W M_Wᵀ`.
//!
//! Rows are kept in working-set order. Appending a row costs `O(k²)`; removing the row at
//! position `q` leaves rows `0..q` untouched and rewrites only the trailing block via a rank-one
//! update, so changes near the end of the working set are cheap.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LdlFactor {
    /// Strictly lower part of `L`, row `i` holds `L[i][0..i]`. The unit diagonal is implicit.
    lower: Vec<Vec<f64>>,
    diag: Vec<f64>,
}

impl LdlFactor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factorizes a symmetric matrix from scratch by successive appends.
    pub fn from_gram(k: &DMatrix<f64>) -> Self {
        let mut factor = Self::new();
        for i in 0..k.nrows() {
            let row: Vec<f64> = (0..=i).map(|j| k[(i, j)]).collect();
            factor.append(&row);
        }
        factor
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn d(&self) -> &[f64] {
        &self.diag
    }

    pub fn l(&self) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from_fn(k, k, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lower[i][j],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        })
    }

    /// `L·diag(D)·Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = self.l();
        let scaled = DMatrix::from_fn(self.len(), self.len(), |i, j| l[(i, j)] * self.diag[j]);
        scaled * l.transpose()
    }

    /// Appends one row/column. `row` holds the new cross terms followed by the new diagonal entry.
    ///
    /// # Panics
    /// If `row.len() != self.len() + 1`.
    pub fn append(&mut self, row: &[f64]) {
        let k = self.len();
        assert_eq!(row.len(), k + 1, "append expects k + 1 entries");
        // Solve L w = cross, then l = D⁻¹ w.
        let mut w = row[..k].to_vec();
        for i in 0..k {
            let li = &self.lower[i];
            let mut s = w[i];
            for (j, lij) in li.iter().enumerate() {
                s -= lij * w[j];
            }
            w[i] = s;
        }
        let mut new_diag = row[k];
        let mut l_row = Vec::with_capacity(k);
        for (wi, di) in w.iter().zip(&self.diag) {
            let lij = if *di != 0.0 { wi / di } else { 0.0 };
            new_diag -= lij * wi;
            l_row.push(lij);
        }
        self.lower.push(l_row);
        self.diag.push(new_diag);
    }

    /// Removes the row/column at `position`.
    ///
    /// # Panics
    /// If `position >= self.len()`.
    pub fn remove(&mut self, position: usize) {
        let k = self.len();
        assert!(position < k, "remove position {position} out of range {k}");
        let mut alpha = self.diag[position];
        let mut w: Vec<f64> = (position + 1..k).map(|i| self.lower[i][position]).collect();

        self.diag.remove(position);
        self.lower.remove(position);
        for row in self.lower.iter_mut().skip(position) {
            row.remove(position);
        }

        // Trailing block gains alpha·w·wᵀ.
        let r = w.len();
        for j in 0..r {
            let pj = w[j];
            let d_old = self.diag[position + j];
            let d_new = d_old + alpha * pj * pj;
            self.diag[position + j] = d_new;
            if d_new == 0.0 {
                continue;
            }
            let beta = pj * alpha / d_new;
            alpha *= d_old / d_new;
            for (i, wi) in w.iter_mut().enumerate().skip(j + 1) {
                let lij = &mut self.lower[position + i][position + j];
                *wi -= pj * *lij;
                *lij += beta * *wi;
            }
        }
    }

    /// Solves `L·diag(D)·Lᵀ·y = rhs` by forward substitution, scaling, and back substitution.
    pub fn solve(&self, rhs: &[f64], singularity_tol: f64) -> Result<Vec<f64>> {
        let k = self.len();
        if rhs.len() != k {
            return Err(Error::Dimension(format!("rhs has length {}, factor is {k}", rhs.len())));
        }
        let threshold = self.pivot_threshold(singularity_tol);
        if let Some((position, &pivot)) =
            self.diag.iter().enumerate().find(|(_, d)| d.abs() <= threshold)
        {
            return Err(Error::Singular { position, pivot });
        }
        let mut y = rhs.to_vec();
        for i in 0..k {
            let mut s = y[i];
            for (j, lij) in self.lower[i].iter().enumerate() {
                s -= lij * y[j];
            }
            y[i] = s;
        }
        for (yi, di) in y.iter_mut().zip(&self.diag) {
            *yi /= di;
        }
        for i in (0..k).rev() {
            let yi = y[i];
            for (j, lij) in self.lower[i].iter().enumerate() {
                y[j] -= lij * yi;
            }
        }
        Ok(y)
    }

    pub fn pivot_threshold(&self, singularity_tol: f64) -> f64 {
        let max_d = self.diag.iter().cloned().fold(1.0_f64, f64::max);
        singularity_tol * max_d
    }

    /// Checks the most recently appended pivot. When it is numerically zero, returns a direction
    /// `p` with `L·diag(D)·Lᵀ·p = 0` (`p` solves `Lᵀp = e_k`), oriented so that `pᵀd_w ≤ 0`.
    pub fn detect_singular(&self, singularity_tol: f64, d_w: &[f64]) -> Option<Vec<f64>> {
        let last = *self.diag.last()?;
        if last > self.pivot_threshold(singularity_tol) {
            return None;
        }
        Some(self.null_direction(d_w))
    }

    /// The direction of [`LdlFactor::detect_singular`] without the pivot test, for callers that
    /// know the last row is dependent.
    pub fn null_direction(&self, d_w: &[f64]) -> Vec<f64> {
        let k = self.len();
        assert!(k > 0, "empty factor has no null direction");
        let mut p = vec![0.0; k];
        p[k - 1] = 1.0;
        for i in (0..k).rev() {
            let pi = p[i];
            for (j, lij) in self.lower[i].iter().enumerate() {
                p[j] -= lij * pi;
            }
        }
        let descent: f64 = p.iter().zip(d_w).map(|(a, b)| a * b).sum();
        if descent > 0.0 {
            p.iter_mut().for_each(|v| *v = -*v);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inf_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn append_two_by_two() {
        let mut f = LdlFactor::new();
        f.append(&[4.0]);
        f.append(&[2.0, 3.0]);
        assert_eq!(f.l()[(1, 0)], 0.5);
        assert_eq!(f.d(), &[4.0, 2.0]);
        let y = f.solve(&[6.0, 5.0], 1e-12).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);

        f.remove(1);
        assert_eq!(f.l(), DMatrix::identity(1, 1));
        assert_eq!(f.d(), &[4.0]);
    }

    #[test]
    fn identity_and_diagonal_solves() {
        let f = LdlFactor::from_gram(&DMatrix::identity(2, 2));
        assert_eq!(f.l(), DMatrix::identity(2, 2));
        assert_eq!(f.d(), &[1.0, 1.0]);

        let f = LdlFactor::from_gram(&(DMatrix::identity(2, 2) * 2.0));
        assert_eq!(f.solve(&[4.0, 2.0], 1e-12).unwrap(), vec![2.0, 1.0]);
        assert_eq!(f.solve(&[0.0, 0.0], 1e-12).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(f.solve(&[1.0], 1e-12), Err(Error::Dimension(_))));
    }

    #[test]
    fn remove_from_front_matches_refactorization() {
        let g = DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0],
        );
        let mut f = LdlFactor::from_gram(&g);
        f.remove(0);
        let expected = g.view((1, 1), (2, 2)).clone_owned();
        assert!(inf_norm(&(f.reconstruct() - &expected)) < 1e-14);
        let fresh = LdlFactor::from_gram(&expected);
        assert!(inf_norm(&(f.l() - fresh.l())) < 1e-14);
    }

    #[test]
    fn duplicate_row_is_singular_with_antisymmetric_direction() {
        // Gram matrix of two identical rows.
        let mut f = LdlFactor::new();
        f.append(&[2.0]);
        f.append(&[2.0, 2.0]);
        let p = f.detect_singular(1e-12, &[1.0, 0.5]).expect("singular");
        assert!((p[0] + p[1]).abs() < 1e-15);
        assert!(p[0] * 1.0 + p[1] * 0.5 <= 0.0);
        let kp = f.reconstruct() * nalgebra::DVector::from_vec(p);
        assert!(kp.amax() < 1e-14);
        assert!(matches!(f.solve(&[1.0, 1.0], 1e-12), Err(Error::Singular { position: 1, .. })));
    }

    #[test]
    fn random_sequences_stay_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows = DMatrix::from_fn(12, 6, |_, _| rng.random_range(-1.0..1.0));
        let gram = &rows * rows.transpose();
        let mut f = LdlFactor::new();
        let mut set: Vec<usize> = Vec::new();
        for _ in 0..200 {
            let grow = set.len() < 2 || (set.len() < 6 && rng.random_bool(0.6));
            if grow {
                let candidates: Vec<usize> = (0..12).filter(|i| !set.contains(i)).collect();
                let j = candidates[rng.random_range(0..candidates.len())];
                let row: Vec<f64> = set.iter().map(|&i| gram[(j, i)]).chain([gram[(j, j)]]).collect();
                f.append(&row);
                set.push(j);
            } else {
                let q = rng.random_range(0..set.len());
                f.remove(q);
                set.remove(q);
            }
            let expected = DMatrix::from_fn(set.len(), set.len(), |i, j| gram[(set[i], set[j])]);
            assert!(inf_norm(&(f.reconstruct() - expected)) <= 1e-10);
        }
    }
}
