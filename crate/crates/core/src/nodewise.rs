// SPDX-License-Identifier: Apache-2.0
//! Nodewise regression estimates of the precision matrix.
//!
//! Column j regresses Xⱼ on the remaining variables, giving coefficients γ̂ⱼ
//! and a noise level τⱼ, and is assembled as
//!
//! ```text
//! Θ̂ⱼⱼ = 1/τⱼ²,   Θ̂ₖⱼ = −γ̂ⱼₖ/τⱼ²  (k ≠ j)
//! ```
//!
//! The regressions only need second moments, so everything runs on the
//! covariance estimate. Two noise levels are available:
//!
//! ```text
//! τ̂ⱼ² = ‖Xⱼ − X₋ⱼγ̂ⱼ‖²₂/n
//! τ̃ⱼ² = τ̂ⱼ² + cⱼ‖Wγ̂ⱼ‖₁ = Xⱼᵀ(Xⱼ − X₋ⱼγ̂ⱼ)/n
//! ```
//!
//! where cⱼ is the multiplier in the stationarity condition
//! X₋ⱼᵀ(Xⱼ − X₋ⱼγ̂ⱼ)/n = cⱼWκ̂ⱼ: cⱼ = λτ̂ⱼ for the square-root Lasso and
//! cⱼ = λ/2 for the Lasso objective ‖Xⱼ − X₋ⱼγ‖²/n + λ‖Wγ‖₁. With τ̃ the
//! columns satisfy Σ̂Θ̂ⱼ − eⱼ = (cⱼ/τ̃ⱼ²)Ẑⱼ with Ẑⱼ = Wκ̂ⱼ (zero at j).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lasso::{self, GramSystem, SolverOptions};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{CovarianceEstimate, PrecisionEstimate, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    SqrtLasso,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauVariant {
    Tilde,
    Hat,
}

/// Named configurations used by the CLI and the simulation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodewiseMethod {
    /// Square-root Lasso, τ̂ assembly, unit penalty weights.
    NodeSqrt,
    /// Square-root Lasso, τ̃ assembly, unit penalty weights.
    NodeSqrtTau,
    /// Lasso with Ŵ-weighted penalty, τ̃ assembly.
    Node,
}

impl NodewiseMethod {
    pub fn name(self) -> &'static str {
        match self {
            NodewiseMethod::NodeSqrt => "node-sqrt",
            NodewiseMethod::NodeSqrtTau => "node-sqrt-tau",
            NodewiseMethod::Node => "node",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "node-sqrt" => Some(NodewiseMethod::NodeSqrt),
            "node-sqrt-tau" => Some(NodewiseMethod::NodeSqrtTau),
            "node" => Some(NodewiseMethod::Node),
            _ => None,
        }
    }

    pub fn config(self, lambda: f64) -> NodewiseConfig {
        let (regressor, tau_variant, weighted) = match self {
            NodewiseMethod::NodeSqrt => (Regressor::SqrtLasso, TauVariant::Hat, false),
            NodewiseMethod::NodeSqrtTau => (Regressor::SqrtLasso, TauVariant::Tilde, false),
            NodewiseMethod::Node => (Regressor::Lasso, TauVariant::Tilde, true),
        };
        NodewiseConfig {
            lambda,
            regressor,
            tau_variant,
            weighted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodewiseConfig {
    pub lambda: f64,
    pub regressor: Regressor,
    pub tau_variant: TauVariant,
    /// Penalty weights Ŵ₋ⱼ (sample standard deviations) instead of ones.
    pub weighted: bool,
}

impl NodewiseConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            regressor: Regressor::SqrtLasso,
            tau_variant: TauVariant::Tilde,
            weighted: true,
        }
    }
}

/// λ = √(log p/n)
pub fn universal_lambda(p: usize, n: usize) -> f64 {
    ((p as f64).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct NodewiseColumnFit {
    pub node: usize,
    /// γ̂ⱼ over the other p − 1 variables in index order.
    pub gamma: Vector,
    pub tau_hat: f64,
    pub tau_tilde: f64,
    pub lambda: f64,
    /// κ̂ⱼ
    pub subgradient: Vector,
    pub weights: Vector,
    /// cⱼ in X₋ⱼᵀr/n = cⱼWκ̂ⱼ.
    pub kkt_scale: f64,
    pub converged: bool,
}

impl NodewiseColumnFit {
    /// The population column: γ⁰ and τ⁰ read off Θ⁰, with τ̃ = τ̂.
    pub fn population(theta0: &PrecisionEstimate, j: usize) -> Result<Self> {
        let (gamma, tau_sq) = population_column(theta0, j)?;
        let q = gamma.len();
        Ok(Self {
            node: j,
            gamma,
            tau_hat: tau_sq.sqrt(),
            tau_tilde: tau_sq.sqrt(),
            lambda: 0.0,
            subgradient: Vector::zeros(q),
            weights: Vector::from_element(q, 1.0),
            kkt_scale: 0.0,
            converged: true,
        })
    }

    pub fn tau_sq(&self, variant: TauVariant) -> f64 {
        match variant {
            TauVariant::Tilde => self.tau_tilde * self.tau_tilde,
            TauVariant::Hat => self.tau_hat * self.tau_hat,
        }
    }

    /// Ẑⱼ = Wκ̂ⱼ as a length-p vector with zero at j.
    pub fn z_full(&self, p: usize) -> Vector {
        expand(self.node, p, |a| self.weights[a] * self.subgradient[a])
    }
}

fn others(j: usize, p: usize) -> Vec<usize> {
    (0..p).filter(|&k| k != j).collect()
}

fn expand(j: usize, p: usize, f: impl Fn(usize) -> f64) -> Vector {
    let mut out = Vector::zeros(p);
    for (a, k) in others(j, p).into_iter().enumerate() {
        out[k] = f(a);
    }
    out
}

/// Regression of variable j on the rest, from second moments.
pub fn fit_node_column(cov: &CovarianceEstimate, j: usize, cfg: &NodewiseConfig) -> Result<NodewiseColumnFit> {
    let p = cov.p();
    if j >= p {
        return Err(Error::InvalidInput(format!("node {j} out of range for p = {p}")));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    if cfg.lambda == 0.0 && p > cov.n {
        return Err(Error::InvalidInput("lambda must be positive when p - 1 >= n".into()));
    }
    let s = &cov.sigma_hat;
    let idx = others(j, p);
    let sys = GramSystem {
        gram: linalg::submatrix(s, &idx, &idx),
        xty: Vector::from_fn(p - 1, |a, _| s[(idx[a], j)]),
        yty: s[(j, j)],
    };
    let weights = if cfg.weighted {
        Vector::from_fn(p - 1, |a, _| cov.w_hat[idx[a]])
    } else {
        Vector::from_element(p - 1, 1.0)
    };
    let opts = SolverOptions::default();
    let (sol, tau_hat, kkt_scale) = match cfg.regressor {
        Regressor::SqrtLasso => {
            let sol = lasso::solve_sqrt_lasso_gram(&sys, cfg.lambda, &weights, None, &opts)?;
            let tau = sol.noise_level.unwrap_or_else(|| sys.rss(&sol.coefficients).sqrt());
            (sol, tau, cfg.lambda * tau)
        }
        Regressor::Lasso => {
            let sol = lasso::solve_lasso_gram(&sys, cfg.lambda / 2.0, &weights, None, &opts);
            let tau = sys.rss(&sol.coefficients).sqrt();
            if tau < 1e-10 {
                return Err(Error::DegenerateResidual(tau));
            }
            (sol, tau, cfg.lambda / 2.0)
        }
    };
    let tilde_sq = tau_hat * tau_hat + kkt_scale * lasso::weighted_l1(&weights, &sol.coefficients);
    Ok(NodewiseColumnFit {
        node: j,
        tau_hat,
        tau_tilde: tilde_sq.sqrt(),
        lambda: cfg.lambda,
        subgradient: sol.subgradient,
        gamma: sol.coefficients,
        weights,
        kkt_scale,
        converged: sol.converged,
    })
}

/// γ⁰ₖ = −Θ⁰ₖⱼ/Θ⁰ⱼⱼ (k ≠ j) and τ⁰² = 1/Θ⁰ⱼⱼ.
pub fn population_column(theta0: &PrecisionEstimate, j: usize) -> Result<(Vector, f64)> {
    let t = &theta0.theta;
    let p = t.nrows();
    if j >= p {
        return Err(Error::InvalidInput(format!("node {j} out of range for p = {p}")));
    }
    linalg::ensure_symmetric(t, 1e-12)?;
    linalg::cholesky(t)?;
    let tjj = t[(j, j)];
    let gamma = Vector::from_iterator(p - 1, others(j, p).into_iter().map(|k| -t[(k, j)] / tjj));
    Ok((gamma, 1.0 / tjj))
}

#[derive(Debug, Clone)]
pub struct NodewiseEstimate {
    pub fits: Vec<NodewiseColumnFit>,
    /// Column-wise assembly; not symmetric in general.
    pub theta: Matrix,
    pub tau_variant: TauVariant,
    pub regressor: Regressor,
}

impl NodewiseEstimate {
    pub fn to_precision(&self) -> PrecisionEstimate {
        let provenance = match self.regressor {
            Regressor::SqrtLasso => Provenance::NodewiseSqrt,
            Regressor::Lasso => Provenance::NodewiseLasso,
        };
        let lambda = self.fits.first().map_or(0.0, |f| f.lambda);
        PrecisionEstimate::new(self.theta.clone(), provenance, lambda)
    }

    /// λ-type bound on ‖Σ̂Θ̂ − I‖_∞ for the τ̃ assembly:
    /// maxⱼ cⱼ/τ̃ⱼ² · max weight.
    pub fn bias_bound(&self) -> f64 {
        self.fits
            .iter()
            .map(|f| f.kkt_scale / (f.tau_tilde * f.tau_tilde) * f.weights.iter().cloned().fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

/// Builds Θ̂ from one fit per node (in any order).
pub fn assemble_precision(fits: Vec<NodewiseColumnFit>, tau_variant: TauVariant, regressor: Regressor) -> Result<NodewiseEstimate> {
    let p = fits.len();
    let mut slot: Vec<Option<NodewiseColumnFit>> = vec![None; p];
    for f in fits {
        if f.node >= p || f.gamma.len() + 1 != p {
            return Err(Error::dims(format!("fits for {p} nodes"), format!("node {} with {} coefficients", f.node, f.gamma.len())));
        }
        let node = f.node;
        slot[node] = Some(f);
    }
    let mut fits = Vec::with_capacity(p);
    for (j, f) in slot.into_iter().enumerate() {
        fits.push(f.ok_or(Error::MissingColumn(j))?);
    }
    let mut theta = Matrix::zeros(p, p);
    for f in &fits {
        let j = f.node;
        let t2 = f.tau_sq(tau_variant);
        if !(t2 > 0.0) {
            return Err(Error::NonPositiveDiagonal(j));
        }
        theta[(j, j)] = 1.0 / t2;
        for (a, k) in others(j, p).into_iter().enumerate() {
            theta[(k, j)] = -f.gamma[a] / t2;
        }
    }
    Ok(NodewiseEstimate {
        fits,
        theta,
        tau_variant,
        regressor,
    })
}

/// All p regressions (in parallel) and the assembly. Any failed column
/// fails the estimate.
pub fn estimate_nodewise(cov: &CovarianceEstimate, cfg: &NodewiseConfig) -> Result<NodewiseEstimate> {
    let fits = (0..cov.p())
        .into_par_iter()
        .map(|j| fit_node_column(cov, j, cfg))
        .collect::<Result<Vec<_>>>()?;
    assemble_precision(fits, cfg.tau_variant, cfg.regressor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_covariance, DataMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn model3(p: usize) -> Matrix {
        Matrix::from_fn(p, p, |i, j| 0.5_f64.powi((i as i32 - j as i32).abs()))
    }

    fn gaussian(theta: &Matrix, n: usize, seed: u64) -> DataMatrix {
        let sigma = linalg::spd_inverse(theta).unwrap();
        let l = linalg::cholesky(&sigma).unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::from_fn(n, theta.nrows(), |_, _| StandardNormal.sample(&mut rng));
        DataMatrix::new(z * l.transpose()).unwrap()
    }

    #[test]
    fn orthogonal_columns_give_zero_coefficients() {
        // columns of a scaled Hadamard-type design are exactly orthogonal
        let x = Matrix::from_row_slice(4, 3, &[1., 2., 3., 1., -2., -3., -1., 2., -3., -1., -2., 3.]);
        let cov = sample_covariance(&DataMatrix::new(x.clone()).unwrap(), false).unwrap();
        for cfg in [NodewiseMethod::NodeSqrt.config(0.3), NodewiseMethod::Node.config(0.3)] {
            for j in 0..3 {
                let fit = fit_node_column(&cov, j, &cfg).unwrap();
                assert!(fit.gamma.iter().all(|&g| g == 0.0));
                let expect = x.column(j).norm_squared() / 4.0;
                assert!((fit.tau_hat.powi(2) - expect).abs() < 1e-12);
                assert_eq!(fit.tau_hat, fit.tau_tilde);
            }
        }
    }

    #[test]
    fn vanishing_lambda_gives_least_squares() {
        let data = gaussian(&model3(5), 400, 3);
        let cov = sample_covariance(&data, false).unwrap();
        let x = data.values();
        for regressor in [Regressor::SqrtLasso, Regressor::Lasso] {
            let cfg = NodewiseConfig {
                lambda: 1e-10,
                regressor,
                tau_variant: TauVariant::Tilde,
                weighted: true,
            };
            let fit = fit_node_column(&cov, 2, &cfg).unwrap();
            let a = data.select_columns(&[0, 1, 3, 4]);
            let ols = (a.transpose() * &a).lu().solve(&(a.transpose() * x.column(2))).unwrap();
            assert!((&fit.gamma - &ols).amax() < 1e-6);
            assert!((fit.tau_tilde - fit.tau_hat).abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_population_coefficients() {
        let theta = model3(5);
        let data = gaussian(&theta, 5000, 17);
        let cov = sample_covariance(&data, false).unwrap();
        let lambda = universal_lambda(5, 5000);
        let cfg = NodewiseMethod::NodeSqrt.config(lambda);
        let pop = PrecisionEstimate::population(theta.clone()).unwrap();
        let (gamma0, _) = population_column(&pop, 0).unwrap();
        let fit = fit_node_column(&cov, 0, &cfg).unwrap();
        // the same regression on Σ₀ isolates the shrinkage bias from sampling error
        let sigma0 = CovarianceEstimate::from_sigma(linalg::spd_inverse(&theta).unwrap(), 5000, true).unwrap();
        let limit = fit_node_column(&sigma0, 0, &cfg).unwrap();
        assert!((&fit.gamma - &limit.gamma).amax() < 0.05, "{} vs {}", fit.gamma, limit.gamma);
        assert!((&limit.gamma - &gamma0).amax() < 0.05);
        assert!((&fit.gamma - &gamma0).amax() < 0.1);
    }

    #[test]
    fn population_column_examples() {
        let id = PrecisionEstimate::population(Matrix::identity(3, 3)).unwrap();
        let (g, t) = population_column(&id, 1).unwrap();
        assert_eq!((g, t), (Vector::zeros(2), 1.0));

        let t3 = Matrix::from_row_slice(3, 3, &[1., 0.5, 0.25, 0.5, 1., 0.5, 0.25, 0.5, 1.]);
        let (g, t) = population_column(&PrecisionEstimate::population(t3.clone()).unwrap(), 0).unwrap();
        assert_eq!(t, 1.0);
        assert_eq!(g, Vector::from_vec(vec![-0.5, -0.25]));

        // regression of X₁ on (X₂, X₃) from Σ₀ by the normal equations
        let sigma = linalg::spd_inverse(&t3).unwrap();
        let s_rest = linalg::submatrix(&sigma, &[1, 2], &[1, 2]);
        let s_cross = Vector::from_vec(vec![sigma[(1, 0)], sigma[(2, 0)]]);
        let beta = s_rest.clone().lu().solve(&s_cross).unwrap();
        assert!((beta - g).amax() < 1e-12);
        let resid = sigma[(0, 0)] - s_cross.dot(&s_rest.lu().solve(&s_cross).unwrap());
        assert!((resid - t).abs() < 1e-12);

        let bad = PrecisionEstimate::new(Matrix::from_row_slice(2, 2, &[1., 2., 2., 1.]), Provenance::Population, 0.0);
        assert!(population_column(&bad, 0).is_err());
    }

    #[test]
    fn assembly_of_trivial_fits_is_diagonal() {
        let v = [2.0_f64, 4.0, 0.5];
        let fits: Vec<_> = (0..3)
            .map(|j| NodewiseColumnFit {
                node: j,
                gamma: Vector::zeros(2),
                tau_hat: v[j],
                tau_tilde: v[j],
                lambda: 0.1,
                subgradient: Vector::zeros(2),
                weights: Vector::from_element(2, 1.0),
                kkt_scale: 0.0,
                converged: true,
            })
            .collect();
        let est = assemble_precision(fits.clone(), TauVariant::Tilde, Regressor::SqrtLasso).unwrap();
        assert_eq!(est.theta, Matrix::from_diagonal(&Vector::from_vec(vec![0.25, 0.0625, 4.0])));
        let missing = assemble_precision(vec![fits[0].clone(), fits[2].clone(), fits[0].clone()], TauVariant::Tilde, Regressor::SqrtLasso);
        assert!(matches!(missing, Err(Error::MissingColumn(1))));
    }

    #[test]
    fn kkt_rearrangement_holds_per_column() {
        for (seed, method) in [(1, NodewiseMethod::NodeSqrtTau), (2, NodewiseMethod::Node), (3, NodewiseMethod::NodeSqrt)] {
            let data = gaussian(&model3(8), 60, seed);
            let cov = sample_covariance(&data, false).unwrap();
            let cfg = method.config(universal_lambda(8, 60));
            let est = estimate_nodewise(&cov, &cfg).unwrap();
            let resid = &cov.sigma_hat * &est.theta - Matrix::identity(8, 8);
            for f in &est.fits {
                let j = f.node;
                let z = f.z_full(8);
                let t2 = f.tau_sq(cfg.tau_variant);
                let mut expect = z * (f.kkt_scale / t2);
                if cfg.tau_variant == TauVariant::Hat {
                    // τ̂ leaves (Σ̂Θ̂ⱼ)ⱼ = τ̃²/τ̂²
                    expect[j] = f.tau_tilde.powi(2) / t2 - 1.0;
                }
                assert!((resid.column(j) - expect).amax() < 1e-6, "{method:?} column {j}");
                assert!(f.tau_tilde >= f.tau_hat);
                assert!(f.subgradient.amax() <= 1.0 + 1e-8);
            }
            if cfg.tau_variant == TauVariant::Tilde {
                assert!(linalg::max_abs(&resid) <= est.bias_bound() + 1e-7);
            }
        }
    }

    #[test]
    fn population_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [2, 3, 7, 20, 50] {
            let a = Matrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
            let mut theta = &a * a.transpose() / p as f64 + Matrix::identity(p, p);
            linalg::mirror_upper(&mut theta);
            let pop = PrecisionEstimate::population(theta.clone()).unwrap();
            let fits = (0..p).map(|j| NodewiseColumnFit::population(&pop, j).unwrap()).collect();
            let est = assemble_precision(fits, TauVariant::Tilde, Regressor::SqrtLasso).unwrap();
            assert!((&est.theta - &theta).amax() <= 1e-12 * theta.amax(), "p = {p}");
        }
    }

    #[test]
    fn parallel_result_matches_sequential() {
        let data = gaussian(&model3(12), 80, 9);
        let cov = sample_covariance(&data, false).unwrap();
        let cfg = NodewiseMethod::NodeSqrt.config(universal_lambda(12, 80));
        let par = estimate_nodewise(&cov, &cfg).unwrap();
        let seq: Vec<_> = (0..12).rev().map(|j| fit_node_column(&cov, j, &cfg).unwrap()).collect();
        let seq = assemble_precision(seq, cfg.tau_variant, cfg.regressor).unwrap();
        assert_eq!(par.theta, seq.theta);
    }
}
