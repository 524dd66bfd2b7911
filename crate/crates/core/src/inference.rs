// SPDX-License-Identifier: Apache-2.0
//! De-biasing, entrywise variances, confidence intervals and edge recovery.
//!
//! For any initial estimate Θ̂ the de-biased matrix is
//!
//! ```text
//! T̂ = Θ̂ + Θ̂ᵀ − Θ̂ᵀΣ̂Θ̂
//! ```
//!
//! and √n(T̂ − Θ₀)ᵢⱼ/σᵢⱼ is asymptotically standard normal with
//! σ²ᵢⱼ = Θᵢᵢ Θⱼⱼ + Θᵢⱼ² under Gaussian data.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{CovarianceEstimate, PrecisionEstimate, Provenance, SparsityPattern};
use crate::stats;

/// T̂ = Θ̂ + Θ̂ᵀ − Θ̂ᵀMΘ̂ with M = Σ̂ or R̂. Exactly symmetric.
pub fn debias(est: &PrecisionEstimate, cov: &CovarianceEstimate, use_correlation: bool) -> Result<Matrix> {
    let p = cov.p();
    if est.p() != p {
        return Err(Error::dims(p, est.p()));
    }
    let m = if use_correlation { &cov.r_hat } else { &cov.sigma_hat };
    let t = &est.theta;
    let mut quad = t.tr_mul(&(m * t));
    linalg::mirror_upper(&mut quad);
    let mut out = t + t.transpose() - quad;
    linalg::mirror_upper(&mut out);
    Ok(out)
}

/// σ̂ᵢⱼ = √(Θ̂ᵢᵢΘ̂ⱼⱼ + Θ̂ᵢⱼ²) from the symmetrized estimate.
pub fn variance_estimates(est: &PrecisionEstimate) -> Result<Matrix> {
    let t = linalg::symmetrize(&est.theta);
    let p = t.nrows();
    if let Some(j) = (0..p).find(|&j| !(t[(j, j)] > 0.0)) {
        return Err(Error::NonPositiveDiagonal(j));
    }
    Ok(Matrix::from_fn(p, p, |i, j| {
        (t[(i, i)] * t[(j, j)] + t[(i, j)] * t[(i, j)]).sqrt()
    }))
}

#[derive(Debug, Clone)]
pub struct DebiasedEstimate {
    pub t_hat: Matrix,
    /// σ̂ᵢⱼ (standard deviation of √n·T̂ᵢⱼ).
    pub sigma_hat: Matrix,
    pub n: usize,
    pub source: Provenance,
}

impl DebiasedEstimate {
    pub fn new(est: &PrecisionEstimate, cov: &CovarianceEstimate, use_correlation: bool) -> Result<Self> {
        Ok(Self {
            t_hat: debias(est, cov, use_correlation)?,
            sigma_hat: variance_estimates(est)?,
            n: cov.n,
            source: est.provenance,
        })
    }

    /// Intervals around the (symmetrized) estimate itself, for likelihood
    /// optima where the correction is a no-op.
    pub fn without_correction(est: &PrecisionEstimate, n: usize) -> Result<Self> {
        Ok(Self {
            t_hat: linalg::symmetrize(&est.theta),
            sigma_hat: variance_estimates(est)?,
            n,
            source: est.provenance,
        })
    }

    pub fn p(&self) -> usize {
        self.t_hat.nrows()
    }

    /// √n(T̂ᵢⱼ − θᵢⱼ)/σ̂ᵢⱼ
    pub fn studentized(&self, theta: &Matrix) -> Matrix {
        let rn = (self.n as f64).sqrt();
        Matrix::from_fn(self.p(), self.p(), |i, j| {
            rn * (self.t_hat[(i, j)] - theta[(i, j)]) / self.sigma_hat[(i, j)]
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConfidenceGrid {
    pub lower: Matrix,
    pub upper: Matrix,
    /// z σ̂ᵢⱼ/√n
    pub half_width: Matrix,
    pub alpha: f64,
    pub z: f64,
}

impl ConfidenceGrid {
    /// Inclusive coverage test.
    pub fn covers(&self, i: usize, j: usize, value: f64) -> bool {
        self.lower[(i, j)] <= value && value <= self.upper[(i, j)]
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// T̂ᵢⱼ ± z_{1−α/2} σ̂ᵢⱼ/√n
pub fn confidence_intervals(deb: &DebiasedEstimate, alpha: f64) -> Result<ConfidenceGrid> {
    check_alpha(alpha)?;
    let z = stats::two_sided_z(alpha);
    let rn = (deb.n as f64).sqrt();
    let half_width = deb.sigma_hat.map(|s| z * s / rn);
    Ok(ConfidenceGrid {
        lower: &deb.t_hat - &half_width,
        upper: &deb.t_hat + &half_width,
        half_width,
        alpha,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryRule {
    /// Level α for every entry.
    PerEntry,
    /// Level α/(p(p − 1)).
    Bonferroni,
}

/// Off-diagonal entries whose interval excludes zero.
pub fn edge_recovery(deb: &DebiasedEstimate, alpha: f64, rule: RecoveryRule) -> Result<SparsityPattern> {
    check_alpha(alpha)?;
    let p = deb.p();
    let level = match rule {
        RecoveryRule::PerEntry => alpha,
        RecoveryRule::Bonferroni => alpha / (p * (p - 1)) as f64,
    };
    let z = stats::two_sided_z(level);
    let rn = (deb.n as f64).sqrt();
    let mut edges = Vec::new();
    for j in 0..p {
        for i in (0..p).filter(|&i| i != j) {
            if deb.t_hat[(i, j)].abs() * rn > z * deb.sigma_hat[(i, j)] {
                edges.push((i, j));
            }
        }
    }
    SparsityPattern::from_edges(p, edges)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrrepDiagnostic {
    /// 1 − max_{e∈Sᶜ} ‖H_eS H_SS⁻¹‖₁
    pub alpha_margin: f64,
    /// ⦀H_SS⁻¹⦀₁
    pub kappa_h: f64,
    /// ⦀Σ₀⦀₁
    pub kappa_sigma: f64,
}

impl IrrepDiagnostic {
    pub fn satisfied(&self) -> bool {
        self.alpha_margin > 0.0
    }
}

/// Edge variables are ordered pairs (i, j); H₀ = Σ₀⊗Σ₀ has entry
/// Σ₀ᵢₖΣ₀ⱼₗ at ((i,j),(k,l)). S holds both orientations of every edge and
/// all diagonal pairs.
pub fn irrepresentability_check(theta0: &PrecisionEstimate, pattern: &SparsityPattern) -> Result<IrrepDiagnostic> {
    let p = theta0.p();
    if pattern.p() != p {
        return Err(Error::dims(p, pattern.p()));
    }
    linalg::ensure_symmetric(&theta0.theta, 1e-10)?;
    let sigma = linalg::spd_inverse(&theta0.theta)?;
    let mut in_s = Vec::new();
    let mut out_s = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i == j || pattern.contains(i, j) || pattern.contains(j, i) {
                in_s.push((i, j));
            } else {
                out_s.push((i, j));
            }
        }
    }
    let h = |a: (usize, usize), b: (usize, usize)| sigma[(a.0, b.0)] * sigma[(a.1, b.1)];
    let m = in_s.len();
    let h_ss = Matrix::from_fn(m, m, |a, b| h(in_s[a], in_s[b]));
    let chol = nalgebra::Cholesky::new(h_ss).ok_or(Error::SingularSubBlock)?;
    let h_inv = chol.inverse();
    if h_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSubBlock);
    }
    let kappa_h = (0..m).map(|b| h_inv.column(b).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let kappa_sigma = (0..p).map(|b| sigma.column(b).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut worst = 0.0_f64;
    for &e in &out_s {
        let row = Matrix::from_fn(1, m, |_, b| h(e, in_s[b]));
        let prod = row * &h_inv;
        worst = worst.max(prod.iter().map(|v| v.abs()).sum());
    }
    Ok(IrrepDiagnostic {
        alpha_margin: 1.0 - worst,
        kappa_h,
        kappa_sigma,
    })
}
