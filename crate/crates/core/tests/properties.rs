// SPDX-License-Identifier: Apache-2.0
//! Cross-module invariants, checked on randomized instances.

use precis::dag::{self, DagModel};
use precis::glasso::{self, GlassoConfig, GlassoVariant};
use precis::inference::{self, DebiasedEstimate, RecoveryRule};
use precis::lasso::{self, LassoProblem};
use precis::linalg::{self, Matrix, Vector};
use precis::model::{pattern_from_matrix, sample_covariance, spectrum_diagnostic, CovarianceEstimate, DataMatrix, PrecisionEstimate, SparsityPattern};
use precis::nodewise::{self, NodewiseConfig, NodewiseMethod};
use precis::simbench::{self, make_dag_instance, make_model, sample_gaussian, ExperimentConfig, LambdaPolicy, Method, ModelKind};
use precis::stats;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_pd(p: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    let mut m = &a * a.transpose() / p as f64 + Matrix::identity(p, p) * 0.5;
    linalg::mirror_upper(&mut m);
    m
}

fn data_for(p: usize, n: usize, seed: u64) -> DataMatrix {
    let theta = PrecisionEstimate::population(random_pd(p, seed)).unwrap();
    sample_gaussian(&theta, n, seed.wrapping_add(1)).unwrap()
}

fn regression(n: usize, q: usize, seed: u64) -> (Matrix, Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng));
    let y = Vector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        a[(i, 0)] - 0.5 * a[(i, q - 1)] + e
    });
    (a, y)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn covariance_is_symmetric_and_normalizes(seed in any::<u64>(), n in 5usize..60, p in 2usize..10, center in any::<bool>()) {
        let cov = sample_covariance(&data_for(p, n, seed), center).unwrap();
        prop_assert_eq!(&cov.sigma_hat, &cov.sigma_hat.transpose());
        for i in 0..p {
            for j in 0..p {
                let r = cov.sigma_hat[(i, j)] / (cov.w_hat[i] * cov.w_hat[j]);
                prop_assert!((cov.r_hat[(i, j)] - r).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pattern_extraction_is_idempotent(seed in any::<u64>(), p in 2usize..12) {
        let theta = random_pd(p, seed).map(|v| if v.abs() < 0.3 { 0.0 } else { v });
        let pattern = pattern_from_matrix(&theta, 0.0).unwrap();
        let masked = Matrix::from_fn(p, p, |i, j| if i == j || pattern.contains(i, j) { theta[(i, j)] } else { 0.0 });
        prop_assert_eq!(pattern_from_matrix(&masked, 0.0).unwrap(), pattern);
    }

    #[test]
    fn sqrt_lasso_is_scale_equivariant(seed in any::<u64>(), c in 0.1f64..20.0, lambda in 0.05f64..0.5) {
        let (a, y) = regression(40, 6, seed);
        let base = lasso::solve_sqrt_lasso(&LassoProblem::new(a.clone(), y.clone(), lambda).unwrap()).unwrap();
        let scaled = lasso::solve_sqrt_lasso(&LassoProblem::new(a, y * c, lambda).unwrap()).unwrap();
        prop_assert!((scaled.coefficients - base.coefficients * c).amax() <= 1e-10 * c.max(1.0));
        prop_assert!((scaled.noise_level.unwrap() - c * base.noise_level.unwrap()).abs() <= 1e-10 * c.max(1.0));
    }

    #[test]
    fn glasso_output_is_symmetric_positive_definite(seed in any::<u64>(), n in 10usize..80, p in 2usize..12, scale in 0.05f64..2.0) {
        let cov = sample_covariance(&data_for(p, n, seed), false).unwrap();
        let lambda = scale * nodewise::universal_lambda(p.max(2), n);
        for variant in [GlassoVariant::Plain, GlassoVariant::Weighted, GlassoVariant::Normalized] {
            let cfg = GlassoConfig::new(lambda, variant);
            let fit = glasso::solve_graphical_lasso(&cov, &cfg).unwrap();
            prop_assume!(fit.converged);
            let t = &fit.estimate.theta;
            prop_assert_eq!(t, &t.transpose());
            prop_assert!(spectrum_diagnostic(t).unwrap().lambda_min > 0.0);
            let obj = glasso::glasso_objective(&cov, &cfg, t).unwrap();
            let target = cfg.target(&cov);
            let diag = Matrix::from_fn(p, p, |i, j| if i == j { 1.0 / target[(i, i)] } else { 0.0 });
            prop_assert!(obj <= glasso::glasso_objective(&cov, &cfg, &diag).unwrap() + 1e-9);
            if let Ok(inv) = linalg::spd_inverse(target) {
                prop_assert!(obj <= glasso::glasso_objective(&cov, &cfg, &inv).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn glasso_beyond_the_largest_penalty_is_diagonal(seed in any::<u64>(), p in 2usize..8) {
        let cov = sample_covariance(&data_for(p, 30, seed), false).unwrap();
        let cap = (0..p).flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| cov.sigma_hat[(i, j)].abs())
            .fold(0.0, f64::max);
        let fit = glasso::solve_graphical_lasso(&cov, &GlassoConfig::new(cap * 1.01, GlassoVariant::Plain)).unwrap();
        for i in 0..p {
            for j in 0..p {
                let expect = if i == j { 1.0 / cov.sigma_hat[(i, i)] } else { 0.0 };
                prop_assert!((fit.estimate.theta[(i, j)] - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nodewise_noise_levels_and_bias_bound(seed in any::<u64>(), n in 20usize..100, p in 3usize..12, tilde in any::<bool>()) {
        let cov = sample_covariance(&data_for(p, n, seed), false).unwrap();
        let method = if tilde { NodewiseMethod::NodeSqrtTau } else { NodewiseMethod::Node };
        let est = nodewise::estimate_nodewise(&cov, &method.config(nodewise::universal_lambda(p, n))).unwrap();
        for f in &est.fits {
            prop_assert!(f.tau_tilde >= f.tau_hat);
            prop_assert_eq!(f.tau_tilde == f.tau_hat, f.gamma.iter().all(|&g| g == 0.0));
        }
        let eta = &cov.sigma_hat * &est.theta - Matrix::identity(p, p);
        prop_assert!(linalg::max_abs(&eta) <= est.bias_bound() + 1e-7);
    }

    #[test]
    fn debiased_intervals_are_symmetric_with_exact_width(seed in any::<u64>(), n in 30usize..120, p in 2usize..10, alpha in 0.001f64..0.5) {
        let cov = sample_covariance(&data_for(p, n, seed), false).unwrap();
        let est = nodewise::estimate_nodewise(&cov, &NodewiseMethod::NodeSqrt.config(nodewise::universal_lambda(p, n))).unwrap();
        let deb = DebiasedEstimate::new(&est.to_precision(), &cov, false).unwrap();
        prop_assert_eq!(&deb.t_hat, &deb.t_hat.transpose());
        let ci = inference::confidence_intervals(&deb, alpha).unwrap();
        let z = stats::two_sided_z(alpha);
        for i in 0..p {
            for j in 0..p {
                let h = z * deb.sigma_hat[(i, j)] / (n as f64).sqrt();
                prop_assert_eq!(ci.half_width[(i, j)].to_bits(), h.to_bits());
                // (t + h) − (t − h) equals 2h up to the rounding of the two endpoints
                let width = ci.upper[(i, j)] - ci.lower[(i, j)];
                prop_assert!((width - 2.0 * h).abs() <= 4.0 * f64::EPSILON * (deb.t_hat[(i, j)].abs() + h));
            }
        }
    }

    #[test]
    fn edge_recovery_is_scale_invariant(seed in any::<u64>(), c in prop::sample::select(vec![0.25, 0.5, 2.0, 8.0, 3.0, 0.7])) {
        // root-RSS loss and Ŵ-weighted penalties are both degree-one homogeneous
        // in the data, so a common scale cancels
        let (n, p) = (120, 8);
        let lambda = nodewise::universal_lambda(p, n);
        let cfg = NodewiseConfig::new(lambda);
        let data = data_for(p, n, seed);
        let scaled = data.scaled(c);
        let edges = |d: &DataMatrix| {
            let cov = sample_covariance(d, false).unwrap();
            let est = nodewise::estimate_nodewise(&cov, &cfg).unwrap();
            let deb = DebiasedEstimate::new(&est.to_precision(), &cov, false).unwrap();
            (inference::edge_recovery(&deb, 0.05, RecoveryRule::PerEntry).unwrap(), deb)
        };
        let (a, da) = edges(&data);
        let (b, db) = edges(&scaled);
        // the studentized statistics agree, so only a near-threshold entry could flip
        let z = stats::two_sided_z(0.05);
        let stat = |d: &DebiasedEstimate| Matrix::from_fn(p, p, |i, j| d.t_hat[(i, j)].abs() * (n as f64).sqrt() / d.sigma_hat[(i, j)]);
        let (sa, sb) = (stat(&da), stat(&db));
        prop_assert!((&sa - &sb).amax() <= 1e-8 * sa.amax());
        let near = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).any(|(i, j)| i != j && (sa[(i, j)] - z).abs() < 1e-8);
        prop_assert!(near || a == b);
    }

    #[test]
    fn dag_precision_identity_and_acyclicity(seed in any::<u64>(), p in 2usize..9, prob in 0.0f64..0.8, omega in 0.3f64..2.0) {
        let m = make_dag_instance(p, prob, (0.2, 1.5), omega, seed).unwrap();
        prop_assert!((m.theta0() * m.sigma0() - Matrix::identity(p, p)).amax() <= 1e-10);
        let permuted = Matrix::from_fn(p, p, |a, b| m.b[(m.ordering[b], m.ordering[a])]);
        for a in 0..p {
            for b in a..p {
                prop_assert_eq!(permuted[(a, b)], 0.0);
            }
        }
        prop_assert!(dag::consistent_with(&m, &m.ordering));
    }

    #[test]
    fn oracle_mle_is_stationary(seed in any::<u64>(), p in 2usize..8, keep in 0.0f64..1.0) {
        let cov = sample_covariance(&data_for(p, 60, seed), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let edges: Vec<(usize, usize)> = (0..p)
            .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
            .filter(|_| rng.random::<f64>() < keep)
            .flat_map(|(i, j)| [(i, j), (j, i)])
            .collect();
        let pattern = SparsityPattern::from_edges(p, edges).unwrap();
        let est = simbench::oracle_mle(&cov, &pattern).unwrap();
        let inv = linalg::spd_inverse(&est.theta).unwrap();
        for i in 0..p {
            for j in 0..p {
                if i == j || pattern.contains(i, j) {
                    prop_assert!((inv[(i, j)] - cov.sigma_hat[(i, j)]).abs() <= 1e-8);
                } else {
                    prop_assert_eq!(est.theta[(i, j)], 0.0);
                }
            }
        }
    }
}

#[test]
fn sample_covariance_concentrates_at_the_log_p_over_n_rate() {
    let (p, n) = (20, 500);
    let id = PrecisionEstimate::population(Matrix::identity(p, p)).unwrap();
    let bound = 5.0 * nodewise::universal_lambda(p, n);
    let hits = (0..100u64)
        .filter(|&s| {
            let cov = sample_covariance(&sample_gaussian(&id, n, s).unwrap(), false).unwrap();
            (&cov.sigma_hat - Matrix::identity(p, p)).amax() <= bound
        })
        .count();
    assert!(hits >= 95, "{hits}");
}

/// Exhaustive evaluation on a 1e-3 grid over [−3, 3]², with the loss read
/// from the Gram matrix.
#[test]
fn solvers_beat_a_fine_grid() {
    for seed in 0..2u64 {
        let (a, y) = regression(25, 2, 40 + seed);
        let n = 25.0;
        let g = a.tr_mul(&a);
        let xty = a.tr_mul(&y);
        let yty = y.norm_squared();
        let lambda = 0.15;
        let prob = LassoProblem::new(a, y, lambda).unwrap();
        let l = lasso::solve_lasso(&prob);
        let s = lasso::solve_sqrt_lasso(&prob).unwrap();
        let rss = |b0: f64, b1: f64| (yty - 2.0 * (b0 * xty[0] + b1 * xty[1]) + b0 * b0 * g[(0, 0)] + 2.0 * b0 * b1 * g[(0, 1)] + b1 * b1 * g[(1, 1)]).max(0.0);
        let (mut best_l, mut best_s) = (f64::INFINITY, f64::INFINITY);
        for i in 0..=6000 {
            let b0 = -3.0 + i as f64 * 1e-3;
            for k in 0..=6000 {
                let b1 = -3.0 + k as f64 * 1e-3;
                let r = rss(b0, b1) / n;
                let l1 = b0.abs() + b1.abs();
                best_l = best_l.min(r + 2.0 * lambda * l1);
                best_s = best_s.min(r.sqrt() + lambda * l1);
            }
        }
        assert!(best_l - prob.lasso_objective(&l.coefficients) >= -1e-5);
        assert!(best_s - prob.sqrt_objective(&s.coefficients) >= -1e-5);
    }
}

#[test]
fn mle_coverage_is_nominal_when_n_dwarfs_p() {
    let cfg = ExperimentConfig {
        model: ModelKind::Model3,
        p: 10,
        n: 10_000,
        replicates: 40,
        alpha: 0.05,
        methods: vec![Method::Mle],
        seed: 3,
        lambda_policy: LambdaPolicy::Universal,
        grid_points: 20,
        first_replicate: 0,
    };
    let t = simbench::run_coverage_experiment(&cfg).unwrap();
    let c = t.row(Method::Mle).unwrap().coverage_all();
    assert!((92.0..=98.0).contains(&c), "{c}");
}

#[test]
fn dag_column_at_least_squares_needs_no_correction() {
    let m = DagModel::chain(4, 0.7, 1.0).unwrap();
    let data = m.sample(500, 2).unwrap();
    let col = dag::debias_dag_column(&data, &[0, 1, 2, 3], 3, 0.0, 0.0).unwrap();
    assert!((&col.b_debiased - &col.beta_hat).amax() < 1e-10);
}

#[test]
fn population_inputs_reproduce_the_model() {
    let theta0 = make_model(ModelKind::Model1, 10, 0).unwrap();
    let cov = CovarianceEstimate::from_sigma(linalg::spd_inverse(&theta0.theta).unwrap(), 0, true).unwrap();
    let est = simbench::oracle_mle(&cov, &pattern_from_matrix(&theta0.theta, 0.0).unwrap()).unwrap();
    assert!((&est.theta - &theta0.theta).amax() < 1e-8);
}
