// SPDX-License-Identifier: Apache-2.0
//! Graphical Lasso: ℓ1-penalized Gaussian likelihood for the precision
//! matrix, with plain, weighted and normalized (correlation-based) penalties.
//!
//! Minimizes tr(SΘ) − log det Θ + Σ_{i≠j} Pᵢⱼ|Θᵢⱼ| over symmetric positive
//! definite Θ, diagonal unpenalized, by block coordinate descent on the
//! working covariance W ≈ Θ⁻¹: each column of W is updated through a Lasso
//! problem in the remaining block, and Θ is recovered from the regression
//! coefficients at the end.

use crate::error::{Error, Result};
use crate::lasso::{self, GramSystem, SolverOptions};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{CovarianceEstimate, PrecisionEstimate, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlassoVariant {
    /// Σ̂ with penalty λ|Θᵢⱼ|.
    Plain,
    /// Σ̂ with penalty λŴᵢᵢŴⱼⱼ|Θᵢⱼ|.
    Weighted,
    /// R̂ with penalty λ|Θᵢⱼ|; estimates the inverse correlation matrix.
    Normalized,
}

impl GlassoVariant {
    pub fn provenance(self) -> Provenance {
        match self {
            GlassoVariant::Plain => Provenance::Glasso,
            GlassoVariant::Weighted => Provenance::GlassoWeighted,
            GlassoVariant::Normalized => Provenance::GlassoNormalized,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GlassoConfig {
    pub lambda: f64,
    pub variant: GlassoVariant,
    /// KKT tolerance.
    pub tol: f64,
    /// Outer sweeps over all columns.
    pub max_iter: usize,
}

impl GlassoConfig {
    pub fn new(lambda: f64, variant: GlassoVariant) -> Self {
        Self {
            lambda,
            variant,
            tol: 1e-7,
            max_iter: 1000,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tol must be positive".into()));
        }
        Ok(())
    }

    /// The matrix entering the likelihood for this variant.
    pub fn target<'a>(&self, cov: &'a CovarianceEstimate) -> &'a Matrix {
        match self.variant {
            GlassoVariant::Normalized => &cov.r_hat,
            _ => &cov.sigma_hat,
        }
    }

    /// Off-diagonal penalty matrix P (zero diagonal).
    pub fn penalty_matrix(&self, cov: &CovarianceEstimate) -> Matrix {
        let p = cov.p();
        Matrix::from_fn(p, p, |i, j| {
            if i == j {
                0.0
            } else {
                match self.variant {
                    GlassoVariant::Weighted => self.lambda * cov.w_hat[i] * cov.w_hat[j],
                    _ => self.lambda,
                }
            }
        })
    }
}

/// Working state, reusable as a warm start along a λ path.
#[derive(Debug, Clone)]
pub struct GlassoState {
    /// Working covariance W.
    pub w: Matrix,
    /// Column j holds the Lasso coefficients of column j (entry j unused).
    pub beta: Matrix,
}

#[derive(Debug, Clone)]
pub struct GlassoFit {
    pub estimate: PrecisionEstimate,
    pub converged: bool,
    pub iterations: usize,
    pub kkt: GlassoKktReport,
    pub state: GlassoState,
}

pub fn solve_graphical_lasso(cov: &CovarianceEstimate, cfg: &GlassoConfig) -> Result<GlassoFit> {
    solve_graphical_lasso_warm(cov, cfg, None)
}

pub fn solve_graphical_lasso_warm(
    cov: &CovarianceEstimate,
    cfg: &GlassoConfig,
    warm: Option<&GlassoState>,
) -> Result<GlassoFit> {
    cfg.validate()?;
    let s = cfg.target(cov);
    let pen = cfg.penalty_matrix(cov);
    let p = s.nrows();

    let (lmin, _) = linalg::eigen_extremes(s);
    if lmin < -cfg.tol * linalg::max_abs(s).max(1.0) {
        return Err(Error::NonPositiveDefiniteInput(lmin));
    }
    if cfg.lambda == 0.0 && linalg::cholesky(s).is_err() {
        return Err(Error::SingularCovariance);
    }

    let mut state = match warm {
        Some(st) if st.w.nrows() == p => GlassoState {
            w: feasible_start(s, &pen, &st.w),
            beta: st.beta.clone(),
        },
        _ => GlassoState {
            w: feasible_start(s, &pen, &Matrix::from_diagonal(&s.diagonal())),
            beta: Matrix::zeros(p, p),
        },
    };

    let opts = SolverOptions {
        coef_tol: 1e-10,
        ..Default::default()
    };
    let change_tol = 1e-7 * s.diagonal().amax().max(1.0);
    let mut best: Option<(PrecisionEstimate, GlassoKktReport)> = None;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            max_change = max_change.max(update_column(&mut state, s, &pen, j, &opts));
        }
        if max_change <= change_tol || iterations == cfg.max_iter {
            // an unfinished iterate may not give a positive definite Θ yet
            let checked = recover_theta(&state, s).and_then(|theta| {
                let est = PrecisionEstimate::new(theta, cfg.variant.provenance(), cfg.lambda);
                let kkt = kkt_against(&est.theta, s, &pen)?;
                Ok((est, kkt))
            });
            let Ok((est, kkt)) = checked else { continue };
            let ok = kkt.passes(cfg.tol);
            best = Some((est, kkt));
            if ok {
                let (estimate, kkt) = best.take().unwrap();
                return Ok(GlassoFit {
                    estimate,
                    converged: true,
                    iterations,
                    kkt,
                    state,
                });
            }
        }
    }
    let (estimate, kkt) = match best {
        Some(b) => b,
        None => {
            let theta = recover_theta(&state, s)?;
            let est = PrecisionEstimate::new(theta, cfg.variant.provenance(), cfg.lambda);
            let kkt = kkt_against(&est.theta, s, &pen)?;
            (est, kkt)
        }
    };
    Ok(GlassoFit {
        estimate,
        converged: false,
        iterations,
        kkt,
        state,
    })
}

/// W = (1 − c)S + c·base with the largest c ∈ [0, 1] such that
/// |Wᵢⱼ − Sᵢⱼ| ≤ Pᵢⱼ. The block updates keep W positive definite only when
/// they start from such a point, and c > 0 whenever every Pᵢⱼ > 0.
fn feasible_start(s: &Matrix, pen: &Matrix, base: &Matrix) -> Matrix {
    let p = s.nrows();
    let mut c = 1.0_f64;
    for j in 0..p {
        for i in (0..p).filter(|&i| i != j) {
            let gap = (base[(i, j)] - s[(i, j)]).abs();
            if gap > 0.0 {
                c = c.min(pen[(i, j)] / gap);
            }
        }
    }
    let mut w = Matrix::from_fn(p, p, |i, j| (1.0 - c) * s[(i, j)] + c * base[(i, j)]);
    for i in 0..p {
        w[(i, i)] = s[(i, i)];
    }
    w
}

/// One block update; returns the largest change in column j of W.
fn update_column(state: &mut GlassoState, s: &Matrix, pen: &Matrix, j: usize, opts: &SolverOptions) -> f64 {
    let p = s.nrows();
    let idx: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let w11 = linalg::submatrix(&state.w, &idx, &idx);
    let s12 = Vector::from_fn(p - 1, |a, _| s[(idx[a], j)]);
    let weights = Vector::from_fn(p - 1, |a, _| pen[(idx[a], j)]);
    let warm = Vector::from_fn(p - 1, |a, _| state.beta[(idx[a], j)]);
    let sys = GramSystem {
        gram: w11,
        xty: s12,
        yty: s[(j, j)],
    };
    let sol = lasso::solve_lasso_gram(&sys, 1.0, &weights, Some(&warm), opts);
    let w12 = &sys.gram * &sol.coefficients;
    let mut change = 0.0_f64;
    for (a, &k) in idx.iter().enumerate() {
        change = change.max((w12[a] - state.w[(k, j)]).abs());
        state.w[(k, j)] = w12[a];
        state.w[(j, k)] = w12[a];
        state.beta[(k, j)] = sol.coefficients[a];
    }
    change
}

/// θⱼⱼ = 1/(Wⱼⱼ − w₁₂ᵀβ), θ₋ⱼⱼ = −β θⱼⱼ, then symmetrized.
fn recover_theta(state: &GlassoState, s: &Matrix) -> Result<Matrix> {
    let p = s.nrows();
    let mut theta = Matrix::zeros(p, p);
    for j in 0..p {
        let mut quad = 0.0;
        for k in (0..p).filter(|&k| k != j) {
            quad += state.w[(k, j)] * state.beta[(k, j)];
        }
        let denom = s[(j, j)] - quad;
        if !(denom > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let tjj = 1.0 / denom;
        theta[(j, j)] = tjj;
        for k in (0..p).filter(|&k| k != j) {
            theta[(k, j)] = -state.beta[(k, j)] * tjj;
        }
    }
    Ok(linalg::symmetrize(&theta))
}

/// tr(SΘ) − log det Θ + Σ_{i≠j} Pᵢⱼ|Θᵢⱼ|
pub fn glasso_objective(cov: &CovarianceEstimate, cfg: &GlassoConfig, theta: &Matrix) -> Result<f64> {
    let s = cfg.target(cov);
    let pen = cfg.penalty_matrix(cov);
    let l1: f64 = pen.iter().zip(theta.iter()).map(|(p, t)| p * t.abs()).sum();
    Ok(linalg::gaussian_loss(s, theta)? + l1)
}

/// Θ̂_w = Ŵ⁻¹Θ̂_norm Ŵ⁻¹.
pub fn weighted_from_normalized(norm_est: &PrecisionEstimate, cov: &CovarianceEstimate) -> Result<PrecisionEstimate> {
    if norm_est.provenance != Provenance::GlassoNormalized {
        return Err(Error::ProvenanceMismatch {
            expected: Provenance::GlassoNormalized.to_string(),
            found: norm_est.provenance.to_string(),
        });
    }
    let p = norm_est.p();
    if cov.p() != p {
        return Err(Error::dims(p, cov.p()));
    }
    let w = &cov.w_hat;
    let theta = Matrix::from_fn(p, p, |i, j| norm_est.theta[(i, j)] / (w[i] * w[j]));
    Ok(PrecisionEstimate::new(
        theta,
        Provenance::GlassoWeighted,
        norm_est.lambda_used,
    ))
}

#[derive(Debug, Clone)]
pub struct GlassoKktReport {
    /// max over i≠j of the violation of Sᵢⱼ − (Θ⁻¹)ᵢⱼ + PᵢⱼẐᵢⱼ = 0.
    pub max_offdiag_violation: f64,
    /// max |Sᵢᵢ − (Θ⁻¹)ᵢᵢ|.
    pub max_diag_residual: f64,
    /// Ẑᵢⱼ = ((Θ⁻¹)ᵢⱼ − Sᵢⱼ)/Pᵢⱼ off the diagonal (0 where Pᵢⱼ = 0).
    pub subgradient: Matrix,
    /// ‖Ẑ‖_∞ ≤ 1 + tol on inactive entries.
    pub subgradient_bounded: bool,
    /// Active entries where sign(Ẑᵢⱼ) disagrees with sign(Θᵢⱼ).
    pub sign_errors: usize,
}

impl GlassoKktReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_offdiag_violation <= tol && self.max_diag_residual <= tol && self.sign_errors == 0
    }
}

pub fn glasso_kkt_report(theta: &PrecisionEstimate, cov: &CovarianceEstimate, cfg: &GlassoConfig) -> Result<GlassoKktReport> {
    if theta.p() != cov.p() {
        return Err(Error::dims(cov.p(), theta.p()));
    }
    kkt_against(&theta.theta, cfg.target(cov), &cfg.penalty_matrix(cov))
}

fn kkt_against(theta: &Matrix, s: &Matrix, pen: &Matrix) -> Result<GlassoKktReport> {
    linalg::ensure_symmetric(theta, 1e-10)?;
    let w = linalg::spd_inverse(theta)?;
    let p = s.nrows();
    let mut off = 0.0_f64;
    let mut diag = 0.0_f64;
    let mut z = Matrix::zeros(p, p);
    let mut bounded = true;
    let mut sign_errors = 0;
    for j in 0..p {
        diag = diag.max((s[(j, j)] - w[(j, j)]).abs());
        for i in (0..p).filter(|&i| i != j) {
            let d = w[(i, j)] - s[(i, j)];
            let pij = pen[(i, j)];
            if pij > 0.0 {
                z[(i, j)] = d / pij;
            }
            let t = theta[(i, j)];
            if t != 0.0 {
                let sgn = linalg::sign(t);
                off = off.max((d - pij * sgn).abs());
                if pij > 0.0 && (z[(i, j)] - sgn).abs() > 1e-6 && (d - pij * sgn).abs() > 1e-6 {
                    sign_errors += 1;
                }
            } else {
                let v = d.abs() - pij;
                off = off.max(v);
                if pij > 0.0 && z[(i, j)].abs() > 1.0 + 1e-6 {
                    bounded = false;
                }
            }
        }
    }
    Ok(GlassoKktReport {
        max_offdiag_violation: off.max(0.0),
        max_diag_residual: diag,
        subgradient: z,
        subgradient_bounded: bounded,
        sign_errors,
    })
}
