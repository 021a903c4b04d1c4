//! Thin wrappers over `faer` dense factorisations. Everything here runs
//! single-threaded; callers parallelise across independent problems.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    llt: Llt<f64>,
}

impl CholeskyFactor {
    /// `None` when the matrix is not numerically positive definite.
    pub fn new(a: MatRef<'_, f64>) -> Option<Self> {
        let llt = a.llt(Side::Lower).ok()?;
        let l = llt.L();
        if (0..l.nrows()).any(|i| !(l[(i, i)] > 0.0 && l[(i, i)].is_finite())) {
            return None;
        }
        Some(CholeskyFactor { llt })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn lower(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    pub fn reconstruct(&self) -> Mat<f64> {
        self.llt.reconstruct()
    }

    /// Overwrites `rhs` with `L⁻¹ rhs`.
    pub fn forward_solve(&self, rhs: &mut Mat<f64>) {
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.llt.L(),
            rhs.as_mut(),
            Par::Seq,
        );
    }
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))
}

pub fn to_rows(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn is_cholesky_factorizable(a: MatRef<'_, f64>) -> bool {
    CholeskyFactor::new(a).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_solve_and_log_det() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let c = CholeskyFactor::new(a.as_ref()).unwrap();
        let x = c.solve(&[6.0, 6.0, 6.0]);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
        // det = (4-1)^2 (4+2) = 54
        assert!((c.log_det() - 54f64.ln()).abs() < 1e-13);
        let inv = c.inverse();
        let prod = &a * &inv;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { 0.01 } else { 0.9 });
        assert!(CholeskyFactor::new(a.as_ref()).is_none());
        let ev = symmetric_eigenvalues(a.as_ref()).unwrap();
        assert!((ev[0] + 0.89).abs() < 1e-14 && (ev[1] - 0.91).abs() < 1e-14);
    }
}
