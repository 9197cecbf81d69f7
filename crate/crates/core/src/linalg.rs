//! Small dense linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Running `sum x x^T` and `sum x y` for least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    dim: usize,
    xx: Vec<f64>,
    xy: Vec<f64>,
    count: usize,
}

impl Gram {
    pub fn new(dim: usize) -> Self {
        Gram {
            dim,
            xx: vec![0.0; dim * dim],
            xy: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.dim);
        for (r, xr) in x.iter().enumerate() {
            if *xr == 0.0 {
                continue;
            }
            let row = &mut self.xx[r * self.dim..(r + 1) * self.dim];
            for (c, xc) in x.iter().enumerate() {
                row[c] += xr * xc;
            }
            self.xy[r] += xr * y;
        }
        self.count += 1;
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.xx)
    }

    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xy)
    }

    /// `(sum x x^T + lambda I)^{-1} sum x y`.
    pub fn solve_ridge(&self, lambda: f64) -> Result<DVector<f64>> {
        let mut a = self.matrix();
        for k in 0..self.dim {
            a[(k, k)] += lambda;
        }
        solve_spd(&a, &self.rhs())
    }
}

/// Numerical rank from the singular values, relative tolerance `d * eps * s_max`.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    sv.iter().filter(|s| **s > tol && **s > 0.0).count()
}

fn singular(a: &DMatrix<f64>) -> Error {
    Error::Singular(format!("matrix has rank {} of {}", rank(a), a.nrows()))
}

pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if rank(a) < a.nrows() {
        return Err(singular(a));
    }
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => Err(singular(a)),
    }
}

pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rank(a) < a.nrows() {
        return Err(singular(a));
    }
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => Err(singular(a)),
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// `(a + a^T) / 2`; removes rounding asymmetry from sandwich products.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}
