//! Dense symmetric positive-definite solves.

use faer::linalg::solvers::{Llt, LltError, Solve};
use faer::linalg::triangular_inverse::invert_lower_triangular;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Default ceiling on `M + n` for any path that materializes dense
/// grid-sized matrices.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

/// Relative diagonal jitter used for the single retry after a failed factorization.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseCap(pub usize);

impl Default for DenseCap {
    fn default() -> Self {
        DenseCap(DEFAULT_DENSE_CAP)
    }
}

impl DenseCap {
    pub fn check(&self, size: usize) -> Result<()> {
        if size > self.0 {
            Err(Error::DenseCap { size, cap: self.0 })
        } else {
            Ok(())
        }
    }
}

/// Lower Cholesky factor of an SPD matrix.
pub struct SpdFactor {
    llt: Llt<f64>,
    /// Jitter that had to be added to the diagonal (0 when none).
    pub jitter: f64,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor")
            .field("size", &self.size())
            .field("jitter", &self.jitter)
            .finish()
    }
}

impl SpdFactor {
    /// Factor `a`; on breakdown retry once with `JITTER * scale` added to the diagonal.
    pub fn new(a: MatRef<'_, f64>, scale: f64) -> Result<Self> {
        match a.llt(Side::Lower) {
            Ok(llt) => Ok(Self { llt, jitter: 0.0 }),
            Err(_) => {
                let jitter = JITTER * scale;
                let mut b = a.to_owned();
                for i in 0..b.nrows() {
                    b[(i, i)] += jitter;
                }
                match b.llt(Side::Lower) {
                    Ok(llt) => Ok(Self { llt, jitter }),
                    Err(LltError::NonPositivePivot { index }) => Err(Error::Factorization {
                        pivot: index,
                        size: a.nrows(),
                    }),
                }
            }
        }
    }

    pub fn size(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    /// `A^{-1} B`.
    pub fn solve(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(b)
    }

    pub fn solve_in_place(&self, b: &mut Mat<f64>) {
        self.llt.solve_in_place(b.as_mut());
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        if b.is_empty() {
            return Vec::new();
        }
        let mut m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.llt.solve_in_place(m.as_mut());
        (0..b.len()).map(|i| m[(i, 0)]).collect()
    }

    /// `L^{-1} B` (half solve), in place.
    pub fn half_solve_in_place(&self, b: &mut Mat<f64>) {
        self.llt.L().solve_lower_triangular_in_place(b.as_mut());
    }

    pub fn half_solve_vec(&self, b: &[f64]) -> Vec<f64> {
        if b.is_empty() {
            return Vec::new();
        }
        let mut m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.half_solve_in_place(&mut m);
        (0..b.len()).map(|i| m[(i, 0)]).collect()
    }

    /// `L^{-T} y`, in place.
    pub fn back_solve_in_place(&self, b: &mut Mat<f64>) {
        self.llt
            .L()
            .transpose()
            .solve_upper_triangular_in_place(b.as_mut());
    }

    /// `diag(A^{-1})`, from the squared column norms of `L^{-1}`.
    pub fn inverse_diag(&self) -> Vec<f64> {
        let l = self.llt.L();
        let mut inv = Mat::zeros(l.nrows(), l.ncols());
        invert_lower_triangular(inv.as_mut(), l, faer::get_global_parallelism());
        col_sq_norms(inv.as_ref())
    }

    /// `L x` for a column vector.
    pub fn mul_l(&self, x: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        let n = l.nrows();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, xk) in x.iter().enumerate().take(i + 1) {
                acc += l[(i, k)] * xk;
            }
            *o = acc;
        }
        out
    }
}

/// Column sums of squares, `diag(B^T B)`.
pub fn col_sq_norms(b: MatRef<'_, f64>) -> Vec<f64> {
    (0..b.ncols())
        .map(|j| {
            let c = b.col(j);
            (0..b.nrows()).map(|i| c[i] * c[i]).sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Mat<f64> {
        Mat::from_fn(n, n, |i, j| (-((i as f64 - j as f64).abs()) / 3.0).exp())
    }

    #[test]
    fn solves_match_direct_product() {
        let a = spd(6);
        let f = SpdFactor::new(a.as_ref(), 1.0).unwrap();
        assert_eq!(f.jitter, 0.0);
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b: Vec<f64> = (0..6).map(|i| (0..6).map(|j| a[(i, j)] * x[j]).sum()).collect();
        let got = f.solve_vec(&b);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-12);
        }
        // L (L^{-1} b) == b
        let half = f.half_solve_vec(&b);
        for (g, w) in f.mul_l(&half).iter().zip(&b) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_need_jitter() {
        let mut a = spd(3);
        // make rows 0 and 1 identical: singular but PSD
        for j in 0..3 {
            a[(1, j)] = a[(0, j)];
            a[(j, 1)] = a[(j, 0)];
        }
        a[(1, 1)] = a[(0, 0)];
        let f = SpdFactor::new(a.as_ref(), 1.0).unwrap();
        assert!(f.jitter > 0.0);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 2.0 });
        match SpdFactor::new(a.as_ref(), 1.0) {
            Err(Error::Factorization { pivot, size }) => {
                assert_eq!(size, 2);
                assert_eq!(pivot, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inverse_diagonal() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 1.0 });
        let d = SpdFactor::new(a.as_ref(), 1.0).unwrap().inverse_diag();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-14 && (d[1] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn cap() {
        assert!(DenseCap(10).check(10).is_ok());
        assert!(matches!(DenseCap(10).check(11), Err(Error::DenseCap { size: 11, cap: 10 })));
    }
}
