//! Small dense helpers on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::CVector;

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Thin SVD truncated to its numerical rank.
pub(crate) struct RankedSvd {
    /// `rows x rank`
    pub u: DMatrix<Complex64>,
    pub sigma: DVector<f64>,
    /// `cols x rank`
    pub v: DMatrix<Complex64>,
    pub cols: usize,
    pub rows: usize,
}

impl RankedSvd {
    pub fn new(matrix: &DMatrix<Complex64>) -> Self {
        let (rows, cols) = matrix.shape();
        let svd = matrix.clone().svd(true, true);
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        // nalgebra does not guarantee sorted singular values.
        let mut keep: Vec<usize> = (0..s.len())
            .filter(|&i| smax > 0.0 && s[i] > RANK_TOL * smax)
            .collect();
        keep.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let u_full = svd.u.expect("u requested");
        let v_full = svd.v_t.expect("v_t requested").adjoint();
        let u = u_full.select_columns(&keep);
        let v = v_full.select_columns(&keep);
        let sigma = DVector::from_iterator(keep.len(), keep.iter().map(|&i| s[i]));
        Self {
            u,
            sigma,
            v,
            cols,
            rows,
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn full_column_rank(&self) -> bool {
        self.rank() == self.cols
    }

    pub fn full_row_rank(&self) -> bool {
        self.rank() == self.rows
    }

    /// `A^+ b`
    pub fn pinv_apply(&self, b: &CVector) -> CVector {
        let mut c = self.u.adjoint() * b;
        for (ci, s) in c.iter_mut().zip(self.sigma.iter()) {
            *ci /= *s;
        }
        &self.v * c
    }

    /// `(A^H A)^+ b` for `b` in column space coordinates (length `cols`).
    pub fn gram_pinv_apply(&self, b: &CVector) -> CVector {
        let mut c = self.v.adjoint() * b;
        for (ci, s) in c.iter_mut().zip(self.sigma.iter()) {
            *ci /= *s * *s;
        }
        &self.v * c
    }

    /// Component of `b` (length `cols`) orthogonal to `span(A^H)`.
    pub fn row_space_residual(&self, b: &CVector) -> CVector {
        b - &self.v * (self.v.adjoint() * b)
    }
}

pub(crate) fn inf_norm(v: &CVector) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pinv_solves_consistent_system() {
        let a = DMatrix::from_row_slice(
            3,
            2,
            &[c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0), c(1.0, 1.0), c(0.0, 0.0), c(3.0, 0.0)],
        );
        let x = CVector::from_vec(vec![c(1.0, -2.0), c(0.5, 0.25)]);
        let b = &a * &x;
        let svd = RankedSvd::new(&a);
        assert!(svd.full_column_rank());
        assert!((svd.pinv_apply(&b) - x).norm() < 1e-12);
    }

    #[test]
    fn duplicate_columns_lose_rank() {
        let a = DMatrix::from_fn(4, 2, |n, _| c(n as f64, 1.0));
        let svd = RankedSvd::new(&a);
        assert_eq!(svd.rank(), 1);
        assert!(!svd.full_column_rank());
    }

    #[test]
    fn row_space_residual_vanishes_on_row_space() {
        let a = DMatrix::from_fn(2, 4, |n, m| c((n + m) as f64, (n * m) as f64 - 1.0));
        let svd = RankedSvd::new(&a);
        let w = CVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.0)]);
        let in_row_space = a.adjoint() * w;
        assert!(svd.row_space_residual(&in_row_space).norm() < 1e-12);
    }
}
