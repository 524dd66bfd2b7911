// SPDX-License-Identifier: Apache-2.0
//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn max_asymmetry(m: &Matrix) -> f64 {
    let p = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..p {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric up to a tolerance relative to the largest entry.
pub fn ensure_symmetric(m: &Matrix, rel_tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dims("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let asym = max_asymmetry(m);
    if asym > rel_tol * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Copies the upper triangle onto the lower one.
pub fn mirror_upper(m: &mut Matrix) {
    let p = m.nrows();
    for j in 0..p {
        for i in 0..j {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// (M + Mᵀ)/2, exactly symmetric.
pub fn symmetrize(m: &Matrix) -> Matrix {
    let p = m.nrows();
    let mut out = m.clone();
    for j in 0..p {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn cholesky(m: &Matrix) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let inv = cholesky(m)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn log_det_spd(m: &Matrix) -> Result<f64> {
    let chol = cholesky(m)?;
    let l = chol.l_dirty();
    Ok((0..m.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum())
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn eigen_extremes(m: &Matrix) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Principal submatrix on `idx`.
pub fn submatrix(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gaussian negative log-likelihood tr(SΘ) − log det Θ.
pub fn gaussian_loss(s: &Matrix, theta: &Matrix) -> Result<f64> {
    let tr = s.component_mul(theta).sum();
    Ok(tr - log_det_spd(theta)?)
}
