//! Tridiagonal matrices and the Thomas algorithm.

use crate::error::{Error, Result};

/// Pivots smaller than this (relative to the row scale) are treated as zero.
const PIVOT_TOL: f64 = 1e-300;

/// Square tridiagonal matrix stored by diagonals.
///
/// `sub[i]` is entry `(i, i-1)` and `sup[i]` is entry `(i, i+1)`;
/// `sub[0]` and `sup[n-1]` are unused and kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            sub: vec![0.0; n],
            diag: vec![1.0; n],
            sup: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Turns row `i` into an identity row.
    pub fn set_dirichlet_row(&mut self, i: usize) {
        self.sub[i] = 0.0;
        self.diag[i] = 1.0;
        self.sup[i] = 0.0;
    }

    pub fn zero_row(&mut self, i: usize) {
        self.sub[i] = 0.0;
        self.diag[i] = 0.0;
        self.sup[i] = 0.0;
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.sup[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// `y = A^T x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.transpose().apply(x)
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut t = Self::zeros(n);
        for i in 0..n {
            t.diag[i] = self.diag[i];
            if i + 1 < n {
                // (i, i+1) of A^T is (i+1, i) of A.
                t.sup[i] = self.sub[i + 1];
                t.sub[i + 1] = self.sup[i];
            }
        }
        t
    }

    /// Solves `A x = rhs` with the Thomas algorithm (no pivoting).
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        let mut scratch = vec![0.0; self.len()];
        self.solve_in_place(&mut x, &mut scratch)?;
        Ok(x)
    }

    /// Solves `A^T x = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.transpose().solve(rhs)
    }

    /// In-place Thomas solve; `scratch` must have the matrix dimension.
    pub fn solve_in_place(&self, x: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        let n = self.len();
        if x.len() != n || scratch.len() != n {
            return Err(Error::Structural(format!(
                "tridiagonal system of size {n} with rhs of size {}",
                x.len()
            )));
        }
        if n == 0 {
            return Ok(());
        }
        let c = scratch;
        let mut pivot = self.diag[0];
        check_pivot(pivot, 0)?;
        c[0] = if n > 1 { self.sup[0] / pivot } else { 0.0 };
        x[0] /= pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.sub[i] * c[i - 1];
            check_pivot(pivot, i)?;
            c[i] = if i + 1 < n { self.sup[i] / pivot } else { 0.0 };
            x[i] = (x[i] - self.sub[i] * x[i - 1]) / pivot;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(())
    }
}

fn check_pivot(p: f64, row: usize) -> Result<()> {
    if !p.is_finite() || p.abs() < PIVOT_TOL {
        return Err(Error::NumericalFailure(format!(
            "zero pivot in tridiagonal solve at row {row}"
        )));
    }
    Ok(())
}
