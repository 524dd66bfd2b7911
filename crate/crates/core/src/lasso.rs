// SPDX-License-Identifier: Apache-2.0
//! Weighted Lasso and weighted square-root Lasso.
//!
//! Conventions (`n` observations, penalty weights `w`):
//!
//! ```text
//! lasso:       ‖y − Aβ‖²₂/n + 2λ Σₖ wₖ|βₖ|      KKT: Aₖᵀ(y − Aβ)/n = λ wₖ κₖ
//! sqrt-lasso:  ‖y − Aγ‖₂/√n +  λ Σₖ wₖ|γₖ|      KKT: Aₖᵀ(y − Aγ)/n = λ τ̂ wₖ κₖ
//! ```
//!
//! with τ̂ = ‖y − Aγ‖₂/√n and κ a subgradient of the ℓ1 norm. The
//! square-root problem is solved through its joint (γ, τ) form
//! ‖y − Aγ‖²₂/(2nτ) + τ/2 + λ‖Wγ‖₁ by alternating a Lasso step with
//! penalty λτ and the update τ ← ‖y − Aγ‖₂/√n.
//!
//! Both solvers work on the Gram system (AᵀA/n, Aᵀy/n, yᵀy/n), so callers
//! that already hold a covariance matrix (nodewise regression, the graphical
//! Lasso) never touch the raw design.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

#[derive(Debug, Clone)]
pub struct LassoProblem {
    design: Matrix,
    response: Vector,
    lambda: f64,
    weights: Vector,
}

impl LassoProblem {
    /// Unit penalty weights.
    pub fn new(design: Matrix, response: Vector, lambda: f64) -> Result<Self> {
        let q = design.ncols();
        Self::with_weights(design, response, lambda, Vector::from_element(q, 1.0))
    }

    pub fn with_weights(design: Matrix, response: Vector, lambda: f64, weights: Vector) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::dims(
                format!("response of length {}", design.nrows()),
                response.len(),
            ));
        }
        if weights.len() != design.ncols() {
            return Err(Error::dims(format!("{} weights", design.ncols()), weights.len()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("penalty weights must be positive".into()));
        }
        if design.nrows() == 0 {
            return Err(Error::InvalidInput("empty design".into()));
        }
        Ok(Self {
            design,
            response,
            lambda,
            weights,
        })
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn response(&self) -> &Vector {
        &self.response
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn gram(&self) -> GramSystem {
        let n = self.n() as f64;
        let mut gram = self.design.tr_mul(&self.design) / n;
        linalg::mirror_upper(&mut gram);
        GramSystem {
            gram,
            xty: self.design.tr_mul(&self.response) / n,
            yty: self.response.norm_squared() / n,
        }
    }

    /// ‖y − Aβ‖²₂/n + 2λ‖Wβ‖₁
    pub fn lasso_objective(&self, beta: &Vector) -> f64 {
        let r = &self.response - &self.design * beta;
        r.norm_squared() / self.n() as f64 + 2.0 * self.lambda * weighted_l1(&self.weights, beta)
    }

    /// ‖y − Aγ‖₂/√n + λ‖Wγ‖₁
    pub fn sqrt_objective(&self, gamma: &Vector) -> f64 {
        let r = &self.response - &self.design * gamma;
        r.norm() / (self.n() as f64).sqrt() + self.lambda * weighted_l1(&self.weights, gamma)
    }

    /// Aᵀ(y − Aβ)/n
    fn residual_correlation(&self, beta: &Vector) -> Vector {
        let r = &self.response - &self.design * beta;
        self.design.tr_mul(&r) / self.n() as f64
    }
}

pub fn weighted_l1(weights: &Vector, beta: &Vector) -> f64 {
    weights.iter().zip(beta.iter()).map(|(w, b)| w * b.abs()).sum()
}

/// Second-moment form of a regression: AᵀA/n, Aᵀy/n and yᵀy/n.
#[derive(Debug, Clone)]
pub struct GramSystem {
    pub gram: Matrix,
    pub xty: Vector,
    pub yty: f64,
}

impl GramSystem {
    pub fn new(gram: Matrix, xty: Vector, yty: f64) -> Result<Self> {
        if !gram.is_square() || gram.nrows() != xty.len() {
            return Err(Error::dims(
                format!("{0}x{0} Gram matrix", xty.len()),
                format!("{}x{}", gram.nrows(), gram.ncols()),
            ));
        }
        Ok(Self { gram, xty, yty })
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// Mean squared residual ‖y − Aβ‖²₂/n.
    pub fn rss(&self, beta: &Vector) -> f64 {
        let g = &self.gram * beta;
        (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&g)).max(0.0)
    }

    /// Aᵀ(y − Aβ)/n
    pub fn residual_correlation(&self, beta: &Vector) -> Vector {
        &self.xty - &self.gram * beta
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Cap on coordinate-descent sweeps (summed over the outer iterations of
    /// the square-root solver).
    pub max_sweeps: usize,
    /// Convergence when the largest coefficient change in a full sweep is at
    /// most this.
    pub coef_tol: f64,
    /// Square-root solver: stop when |τ_new − τ_old| ≤ tau_tol·max(1, τ_old).
    pub tau_tol: f64,
    /// Re-solve the KKT system on the detected active set and sign pattern.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            coef_tol: 1e-9,
            tau_tol: 1e-8,
            polish: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub coefficients: Vector,
    /// τ̂ for the square-root variant.
    pub noise_level: Option<f64>,
    /// κ recovered from the stationarity condition.
    pub subgradient: Vector,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every sweep (lasso) or every τ update (square-root).
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lasso,
    Sqrt,
}

/// Lasso by cyclic coordinate descent. A solve that hits `max_sweeps`
/// returns its last iterate with `converged = false`.
pub fn solve_lasso(prob: &LassoProblem) -> LassoSolution {
    solve_lasso_with(prob, &SolverOptions::default())
}

pub fn solve_lasso_with(prob: &LassoProblem, opts: &SolverOptions) -> LassoSolution {
    let sys = prob.gram();
    solve_lasso_gram(&sys, prob.lambda, &prob.weights, None, opts)
}

pub fn solve_sqrt_lasso(prob: &LassoProblem) -> Result<LassoSolution> {
    solve_sqrt_lasso_with(prob, &SolverOptions::default())
}

pub fn solve_sqrt_lasso_with(prob: &LassoProblem, opts: &SolverOptions) -> Result<LassoSolution> {
    let sys = prob.gram();
    let mut sol = solve_sqrt_lasso_gram(&sys, prob.lambda, &prob.weights, None, opts)?;
    // the design gives a more accurate residual norm than the Gram identity
    let tau = (prob.response() - prob.design() * &sol.coefficients).norm() / (prob.n() as f64).sqrt();
    if tau < 1e-10 {
        return Err(Error::DegenerateResidual(tau));
    }
    sol.noise_level = Some(tau);
    Ok(sol)
}

pub fn solve_lasso_gram(
    sys: &GramSystem,
    lambda: f64,
    weights: &Vector,
    warm: Option<&Vector>,
    opts: &SolverOptions,
) -> LassoSolution {
    let q = sys.dim();
    let pen: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
    let mut beta = warm.cloned().unwrap_or_else(|| Vector::zeros(q));
    let mut grad = sys.residual_correlation(&beta);
    let mut trace = Vec::new();
    let (sweeps, converged) = coordinate_descent(sys, &pen, &mut beta, &mut grad, opts, opts.max_sweeps, |b, g| {
        trace.push(lasso_gram_objective(sys, &pen, b, g))
    });
    if converged && opts.polish {
        if let Some(polished) = polish_lasso(sys, &pen, &beta) {
            beta = polished;
            grad = sys.residual_correlation(&beta);
        }
    }
    let subgradient = subgradient_from(&beta, &grad, &pen);
    LassoSolution {
        coefficients: beta,
        noise_level: None,
        subgradient,
        iterations: sweeps,
        converged,
        objective_trace: trace,
    }
}

pub fn solve_sqrt_lasso_gram(
    sys: &GramSystem,
    lambda: f64,
    weights: &Vector,
    warm: Option<&Vector>,
    opts: &SolverOptions,
) -> Result<LassoSolution> {
    let q = sys.dim();
    let mut gamma = warm.cloned().unwrap_or_else(|| Vector::zeros(q));
    let mut grad = sys.residual_correlation(&gamma);
    let mut tau = sys.rss(&gamma).sqrt();
    if tau < 1e-10 {
        return Err(Error::DegenerateResidual(tau));
    }
    let l1 = |g: &Vector| weighted_l1(weights, g);
    let mut trace = vec![tau + lambda * l1(&gamma)];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        let pen: Vec<f64> = weights.iter().map(|w| lambda * tau * w).collect();
        let (used, inner_ok) =
            coordinate_descent(sys, &pen, &mut gamma, &mut grad, opts, opts.max_sweeps - sweeps, |_, _| {});
        sweeps += used;
        let tau_new = sys.rss(&gamma).sqrt();
        if tau_new < 1e-10 {
            return Err(Error::DegenerateResidual(tau_new));
        }
        trace.push(tau_new + lambda * l1(&gamma));
        let done = (tau_new - tau).abs() <= opts.tau_tol * tau.max(1.0);
        tau = tau_new;
        if done && inner_ok {
            converged = true;
            break;
        }
    }
    if converged && opts.polish {
        if let Some((polished, t)) = polish_sqrt(sys, lambda, weights, &gamma) {
            gamma = polished;
            tau = t;
            grad = sys.residual_correlation(&gamma);
        }
    }
    let pen: Vec<f64> = weights.iter().map(|w| lambda * tau * w).collect();
    let subgradient = subgradient_from(&gamma, &grad, &pen);
    Ok(LassoSolution {
        coefficients: gamma,
        noise_level: Some(tau),
        subgradient,
        iterations: sweeps,
        converged,
        objective_trace: trace,
    })
}

/// ½ of the lasso objective is what coordinate descent decreases; the trace
/// reports the full objective.
fn lasso_gram_objective(sys: &GramSystem, pen: &[f64], beta: &Vector, grad: &Vector) -> f64 {
    // rss = yty − βᵀc − βᵀ(c − Gβ)
    let rss = (sys.yty - beta.dot(&sys.xty) - beta.dot(grad)).max(0.0);
    rss + 2.0 * pen.iter().zip(beta.iter()).map(|(p, b)| p * b.abs()).sum::<f64>()
}

/// Cyclic coordinate descent on ½βᵀGβ − βᵀc + Σ penₖ|βₖ|, keeping
/// `grad = c − Gβ` current. Alternates full sweeps with sweeps over the
/// active set; returns (sweeps used, converged).
fn coordinate_descent(
    sys: &GramSystem,
    pen: &[f64],
    beta: &mut Vector,
    grad: &mut Vector,
    opts: &SolverOptions,
    budget: usize,
    mut on_sweep: impl FnMut(&Vector, &Vector),
) -> (usize, bool) {
    let q = sys.dim();
    let g = &sys.gram;
    let mut sweeps = 0;
    let update = |k: usize, beta: &mut Vector, grad: &mut Vector| -> f64 {
        let gkk = g[(k, k)];
        if gkk <= 0.0 {
            return 0.0;
        }
        let old = beta[k];
        let z = grad[k] + gkk * old;
        let new = linalg::soft_threshold(z, pen[k]) / gkk;
        let delta = new - old;
        if delta != 0.0 {
            beta[k] = new;
            grad.axpy(-delta, &g.column(k), 1.0);
        }
        delta.abs()
    };
    while sweeps < budget {
        let mut dmax = 0.0_f64;
        for k in 0..q {
            dmax = dmax.max(update(k, beta, grad));
        }
        sweeps += 1;
        on_sweep(beta, grad);
        if dmax <= opts.coef_tol {
            return (sweeps, true);
        }
        let active: Vec<usize> = (0..q).filter(|&k| beta[k] != 0.0).collect();
        while sweeps < budget {
            let mut dmax = 0.0_f64;
            for &k in &active {
                dmax = dmax.max(update(k, beta, grad));
            }
            sweeps += 1;
            on_sweep(beta, grad);
            if dmax <= opts.coef_tol {
                break;
            }
        }
    }
    (sweeps, false)
}

fn active_set(beta: &Vector) -> Vec<usize> {
    (0..beta.len()).filter(|&k| beta[k] != 0.0).collect()
}

/// Solves G_AA β_A = c_A − pen_A∘sign(β_A) and keeps the result only if it
/// satisfies the full KKT conditions with the same sign pattern.
fn polish_lasso(sys: &GramSystem, pen: &[f64], beta: &Vector) -> Option<Vector> {
    let active = active_set(beta);
    if active.is_empty() {
        return None;
    }
    let gaa = linalg::submatrix(&sys.gram, &active, &active);
    let chol = nalgebra::Cholesky::new(gaa)?;
    let rhs = Vector::from_fn(active.len(), |a, _| {
        let k = active[a];
        sys.xty[k] - pen[k] * linalg::sign(beta[k])
    });
    let u = chol.solve(&rhs);
    let mut out = Vector::zeros(beta.len());
    for (a, &k) in active.iter().enumerate() {
        if u[a] * beta[k] <= 0.0 {
            return None;
        }
        out[k] = u[a];
    }
    kkt_holds(sys, &out, pen).then_some(out)
}

/// Active-set solution of the square-root problem. With signs s fixed,
/// γ(τ) = u − τv where G_AA u = c_A and G_AA v = λ w_A∘s, and the residual
/// satisfies rss(γ(τ)) = r₀ + τ²·vᵀG_AAv with r₀ the least-squares residual
/// on A. The fixed point τ² = rss then gives τ² = r₀/(1 − vᵀG_AAv).
fn polish_sqrt(sys: &GramSystem, lambda: f64, weights: &Vector, gamma: &Vector) -> Option<(Vector, f64)> {
    let active = active_set(gamma);
    if active.is_empty() {
        return None;
    }
    let gaa = linalg::submatrix(&sys.gram, &active, &active);
    let chol = nalgebra::Cholesky::new(gaa)?;
    let c_a = Vector::from_fn(active.len(), |a, _| sys.xty[active[a]]);
    let pen_a = Vector::from_fn(active.len(), |a, _| {
        let k = active[a];
        lambda * weights[k] * linalg::sign(gamma[k])
    });
    let u = chol.solve(&c_a);
    let v = chol.solve(&pen_a);
    let r0 = sys.yty - u.dot(&c_a);
    let quad = v.dot(&pen_a);
    if !(r0 > 0.0 && quad < 1.0) {
        return None;
    }
    let tau = (r0 / (1.0 - quad)).sqrt();
    let mut out = Vector::zeros(gamma.len());
    for (a, &k) in active.iter().enumerate() {
        let val = u[a] - tau * v[a];
        if val * gamma[k] <= 0.0 {
            return None;
        }
        out[k] = val;
    }
    let pen: Vec<f64> = weights.iter().map(|w| lambda * tau * w).collect();
    kkt_holds(sys, &out, &pen).then_some((out, tau))
}

fn kkt_holds(sys: &GramSystem, beta: &Vector, pen: &[f64]) -> bool {
    let grad = sys.residual_correlation(beta);
    (0..beta.len()).all(|k| {
        let slack = 1e-9 * (1.0 + pen[k]);
        if beta[k] != 0.0 {
            (grad[k] - pen[k] * linalg::sign(beta[k])).abs() <= slack
        } else {
            grad[k].abs() <= pen[k] + slack
        }
    })
}

fn subgradient_from(beta: &Vector, grad: &Vector, pen: &[f64]) -> Vector {
    Vector::from_fn(beta.len(), |k, _| {
        if pen[k] <= 0.0 {
            0.0
        } else if beta[k] != 0.0 {
            linalg::sign(beta[k])
        } else {
            grad[k] / pen[k]
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest stationarity violation over coordinates.
    pub max_violation: f64,
    /// Active coordinates whose implied subgradient differs from sign(βₖ)
    /// by more than 1e-6.
    pub active_set_sign_errors: usize,
}

impl KktReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol && self.active_set_sign_errors == 0
    }
}

/// Recomputes the stationarity conditions from the raw design.
pub fn kkt_report(prob: &LassoProblem, sol: &LassoSolution, variant: Variant) -> KktReport {
    let grad = prob.residual_correlation(&sol.coefficients);
    let scale = match variant {
        Variant::Lasso => 1.0,
        Variant::Sqrt => {
            let r = prob.response() - prob.design() * &sol.coefficients;
            r.norm() / (prob.n() as f64).sqrt()
        }
    };
    let pen: Vec<f64> = prob.weights.iter().map(|w| prob.lambda * w).collect();
    kkt_from_gradient(&sol.coefficients, &grad, &pen, scale)
}

/// KKT check where `grad = Aᵀ(y − Aβ)/n` is divided by `scale` (τ̂ for the
/// square-root variant) before comparison with the penalties.
pub fn kkt_from_gradient(beta: &Vector, grad: &Vector, pen: &[f64], scale: f64) -> KktReport {
    let mut max_violation = 0.0_f64;
    let mut sign_errors = 0;
    for k in 0..beta.len() {
        let g = grad[k] / scale;
        if beta[k] != 0.0 {
            let s = linalg::sign(beta[k]);
            max_violation = max_violation.max((g - pen[k] * s).abs());
            if pen[k] > 0.0 && (g / pen[k] - s).abs() > 1e-6 {
                sign_errors += 1;
            }
        } else {
            max_violation = max_violation.max(g.abs() - pen[k]);
        }
    }
    KktReport {
        max_violation: max_violation.max(0.0),
        active_set_sign_errors: sign_errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_problem(n: usize, q: usize, lambda: f64, seed: u64) -> LassoProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng));
        let noise = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let truth = Vector::from_fn(q, |k, _| if k % 3 == 0 { 1.5 } else { 0.0 });
        let y = &a * truth + noise;
        LassoProblem::new(a, y, lambda).unwrap()
    }

    fn least_squares(prob: &LassoProblem) -> Vector {
        let a = prob.design();
        (a.tr_mul(a)).cholesky().unwrap().solve(&a.tr_mul(prob.response()))
    }

    #[test]
    fn orthogonal_response_gives_zero() {
        let a = Matrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        // y orthogonal to both columns
        let y = Vector::from_vec(vec![1.0, -1.0, -1.0, 1.0]);
        let prob = LassoProblem::new(a, y.clone(), 0.2).unwrap();
        let sol = solve_lasso(&prob);
        assert_eq!(sol.coefficients, Vector::zeros(2));
        let sq = solve_sqrt_lasso(&prob).unwrap();
        assert_eq!(sq.coefficients, Vector::zeros(2));
        assert!((sq.noise_level.unwrap() - y.norm() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let prob = random_problem(50, 6, 0.0, 3);
        let ols = least_squares(&prob);
        let sol = solve_lasso(&prob);
        assert!(sol.converged);
        assert!((&sol.coefficients - &ols).amax() < 1e-8);
        let sq = solve_sqrt_lasso(&prob).unwrap();
        assert!((&sq.coefficients - &ols).amax() < 1e-8);
        let rms = (prob.response() - prob.design() * &ols).norm() / 50f64.sqrt();
        assert!((sq.noise_level.unwrap() - rms).abs() < 1e-10);
    }

    /// A single column with aᵀa/n = 1 and aᵀy/n = 0.9.
    fn one_dim(lambda: f64) -> LassoProblem {
        let a = Matrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let y = Vector::from_vec(vec![0.9, 1.5, 0.3, 0.9]);
        LassoProblem::new(a, y, lambda).unwrap()
    }

    #[test]
    fn one_dimensional_soft_threshold() {
        let prob = one_dim(0.3);
        // grid oracle over β
        let best = (0..=300_000)
            .map(|i| -1.5 + i as f64 * 1e-5)
            .min_by(|a, b| {
                let fa = prob.lasso_objective(&Vector::from_element(1, *a));
                let fb = prob.lasso_objective(&Vector::from_element(1, *b));
                fa.partial_cmp(&fb).unwrap()
            })
            .unwrap();
        assert!((best - 0.6).abs() < 2e-5);
        let sol = solve_lasso(&prob);
        assert!((sol.coefficients[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_sqrt_matches_grid() {
        let prob = one_dim(0.3);
        let sol = solve_sqrt_lasso(&prob).unwrap();
        let (best, _) = (0..=400_000)
            .map(|i| -1.0 + i as f64 * 5e-6)
            .map(|g| (g, prob.sqrt_objective(&Vector::from_element(1, g))))
            .fold((0.0, f64::INFINITY), |acc, (g, f)| if f < acc.1 { (g, f) } else { acc });
        assert!((sol.coefficients[0] - best).abs() < 1e-4, "{} vs {}", sol.coefficients[0], best);
        // scaled soft-threshold fixed point: γ = soft(0.9, λτ̂)
        let tau = sol.noise_level.unwrap();
        assert!((sol.coefficients[0] - (0.9 - 0.3 * tau)).abs() < 1e-10);
    }

    #[test]
    fn kkt_report_examples() {
        let prob = random_problem(60, 8, 0.15, 11);
        let sol = solve_lasso(&prob);
        let rep = kkt_report(&prob, &sol, Variant::Lasso);
        assert!(rep.max_violation <= 1e-7 && rep.active_set_sign_errors == 0);

        let mut bumped = sol.clone();
        let k = (0..8).find(|&k| sol.coefficients[k] != 0.0).unwrap();
        bumped.coefficients[k] += 0.1;
        let rep = kkt_report(&prob, &bumped, Variant::Lasso);
        // direct recomputation: |Aₖᵀr/n − λ·sign| grows by ‖Aₖ‖²/n · 0.1
        let a = prob.design();
        let expected = (a.column(k).norm_squared() / 60.0) * 0.1;
        assert!(rep.max_violation > 1e-3);
        assert!(rep.max_violation >= expected - 1e-6);

        let zero = LassoSolution {
            coefficients: Vector::zeros(8),
            noise_level: None,
            subgradient: Vector::zeros(8),
            iterations: 0,
            converged: true,
            objective_trace: vec![],
        };
        let cty = (a.tr_mul(prob.response()) / 60.0).amax();
        let rep = kkt_report(&prob, &zero, Variant::Lasso);
        assert!((rep.max_violation - (cty - 0.15)).abs() < 1e-12);
    }

    #[test]
    fn objective_is_monotone() {
        let prob = random_problem(40, 30, 0.05, 5);
        let opts = SolverOptions {
            polish: false,
            ..Default::default()
        };
        let sol = solve_lasso_with(&prob, &opts);
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        let sq = solve_sqrt_lasso_with(&prob, &opts).unwrap();
        for w in sq.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn degenerate_residual() {
        // n == q: exact interpolation at λ = 0
        let prob = random_problem(5, 5, 0.0, 1);
        assert!(matches!(solve_sqrt_lasso(&prob), Err(Error::DegenerateResidual(_))));
    }

    #[test]
    fn weights_change_penalty_per_coordinate() {
        let prob = random_problem(80, 4, 0.2, 9);
        let w = Vector::from_vec(vec![1.0, 5.0, 0.5, 2.0]);
        let weighted = LassoProblem::with_weights(prob.design().clone(), prob.response().clone(), 0.2, w).unwrap();
        let sol = solve_lasso(&weighted);
        assert!(kkt_report(&weighted, &sol, Variant::Lasso).passes(1e-7));
        let sq = solve_sqrt_lasso(&weighted).unwrap();
        assert!(kkt_report(&weighted, &sq, Variant::Sqrt).passes(1e-7));
    }

    #[test]
    fn high_dimensional_kkt() {
        for seed in 0..5 {
            let prob = random_problem(30, 60, 0.3, seed);
            let sol = solve_lasso(&prob);
            assert!(sol.converged);
            assert!(kkt_report(&prob, &sol, Variant::Lasso).passes(1e-7));
            let sq = solve_sqrt_lasso(&prob).unwrap();
            assert!(kkt_report(&prob, &sq, Variant::Sqrt).passes(1e-7));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sqrt_lasso_is_scale_equivariant(seed in 0u64..1000, c in 0.01f64..100.0, lambda in 0.05f64..0.5) {
            let prob = random_problem(40, 10, lambda, seed);
            let scaled = LassoProblem::new(prob.design().clone(), prob.response() * c, lambda).unwrap();
            let a = solve_sqrt_lasso(&prob).unwrap();
            let b = solve_sqrt_lasso(&scaled).unwrap();
            let tol = 1e-10 * c.max(1.0);
            prop_assert!((&a.coefficients * c - &b.coefficients).amax() < tol);
            prop_assert!((a.noise_level.unwrap() * c - b.noise_level.unwrap()).abs() < tol);
        }

        #[test]
        fn converged_solves_pass_kkt(seed in 0u64..10_000, lambda in 0.01f64..1.0, q in 1usize..25) {
            let prob = random_problem(30, q, lambda, seed);
            let sol = solve_lasso(&prob);
            prop_assert!(sol.converged);
            prop_assert!(kkt_report(&prob, &sol, Variant::Lasso).passes(1e-7));
            for k in 0..q {
                prop_assert!(sol.subgradient[k].abs() <= 1.0 + 1e-8);
            }
        }
    }
}
