// SPDX-License-Identifier: Apache-2.0
//! Gaussian DAGs with equal error variances: ℓ0-penalized ordering search
//! and de-biased edge-weight inference.
//!
//! Structural equations Xⱼ = Σₖ B₀ₖⱼXₖ + εⱼ with εⱼ ~ 𝒩(0, ω₀²) give
//!
//! ```text
//! Θ₀ = (I − B₀)(I − B₀)ᵀ/ω₀²,   Σ₀ = ω₀²(I − B₀)⁻ᵀ(I − B₀)⁻¹.
//! ```
//!
//! An ordering π is scored by profiling ω out of the Gaussian likelihood:
//!
//! ```text
//! score(π) = min over supports of  p·log(Σⱼ rssⱼ/p) + λ²·s
//! ```
//!
//! where rssⱼ is the mean squared residual of the least-squares fit of Xⱼ
//! on its chosen support among the predecessors of j, and s is the total
//! support size. Up to the constant p this equals tr(ΘΣ̂) − log det Θ at
//! the profiled ω plus λ²s. For each node the best residual at every
//! support size comes from best-subset search (exhaustive for at most 10
//! predecessors, forward stepwise beyond); the sizes are then allocated
//! across nodes exactly by dynamic programming over s.

use std::collections::HashMap;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::check_alpha;
use crate::lasso::{self, GramSystem, SolverOptions};
use crate::linalg::{self, Matrix, Vector};
use crate::model::DataMatrix;
use crate::stats;

/// Exhaustive best-subset search is used up to this many predecessors.
const EXHAUSTIVE_SUBSET_LIMIT: usize = 10;
/// Largest p accepted by the exhaustive ordering search.
pub const EXHAUSTIVE_ORDERING_LIMIT: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct DagModel {
    /// B₀ with β⁰ₖⱼ at (k, j).
    pub b: Matrix,
    pub omega: f64,
    pub ordering: Vec<usize>,
    pub parents: Vec<Vec<usize>>,
}

impl DagModel {
    pub fn new(b: Matrix, omega: f64, ordering: Vec<usize>) -> Result<Self> {
        let p = b.nrows();
        if !b.is_square() {
            return Err(Error::dims(format!("{p}x{p}"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidInput(format!("omega must be positive, got {omega}")));
        }
        let pos = positions(&ordering, p)?;
        for k in 0..p {
            for j in 0..p {
                if b[(k, j)] != 0.0 && pos[k] >= pos[j] {
                    return Err(Error::InvalidInput(format!(
                        "edge {k} -> {j} points backwards in the ordering"
                    )));
                }
            }
        }
        let parents = (0..p).map(|j| (0..p).filter(|&k| b[(k, j)] != 0.0).collect()).collect();
        Ok(Self {
            b,
            omega,
            ordering,
            parents,
        })
    }

    /// Chain 0 → 1 → … → p−1 with common weight β.
    pub fn chain(p: usize, beta: f64, omega: f64) -> Result<Self> {
        let b = Matrix::from_fn(p, p, |k, j| if j == k + 1 { beta } else { 0.0 });
        Self::new(b, omega, (0..p).collect())
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    /// (I − B₀)(I − B₀)ᵀ/ω₀²
    pub fn theta0(&self) -> Matrix {
        let p = self.p();
        let a = Matrix::identity(p, p) - &self.b;
        let mut t = &a * a.transpose() / (self.omega * self.omega);
        linalg::mirror_upper(&mut t);
        t
    }

    /// ω₀²(I − B₀)⁻ᵀ(I − B₀)⁻¹
    pub fn sigma0(&self) -> Matrix {
        let p = self.p();
        let inv = (Matrix::identity(p, p) - &self.b)
            .try_inverse()
            .expect("I - B is unit triangular up to permutation");
        let mut s = inv.transpose() * inv * (self.omega * self.omega);
        linalg::mirror_upper(&mut s);
        s
    }

    /// n draws of the structural equations, evaluated along the ordering.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DataMatrix> {
        use rand_distr::{Distribution, StandardNormal};
        let p = self.p();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Matrix::zeros(n, p);
        for i in 0..n {
            for &j in &self.ordering {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let mut v = self.omega * eps;
                for &k in &self.parents[j] {
                    v += self.b[(k, j)] * x[(i, k)];
                }
                x[(i, j)] = v;
            }
        }
        DataMatrix::new(x)
    }
}

fn positions(ordering: &[usize], p: usize) -> Result<Vec<usize>> {
    let mut pos = vec![usize::MAX; p];
    if ordering.len() != p {
        return Err(Error::dims(format!("a permutation of {p} nodes"), ordering.len()));
    }
    for (r, &j) in ordering.iter().enumerate() {
        if j >= p || pos[j] != usize::MAX {
            return Err(Error::InvalidInput(format!("{ordering:?} is not a permutation")));
        }
        pos[j] = r;
    }
    Ok(pos)
}

/// Best mean squared residual of node j for each support size.
#[derive(Debug, Clone)]
struct Curve {
    rss: Vec<f64>,
    support: Vec<Vec<usize>>,
}

/// Least-squares residual of `j` on `support`, or None if collinear.
fn ls_rss(sigma: &Matrix, j: usize, support: &[usize]) -> Option<f64> {
    if support.is_empty() {
        return Some(sigma[(j, j)]);
    }
    let g = linalg::submatrix(sigma, support, support);
    let c = Vector::from_iterator(support.len(), support.iter().map(|&k| sigma[(k, j)]));
    let chol = nalgebra::Cholesky::new(g)?;
    let beta = chol.solve(&c);
    Some((sigma[(j, j)] - beta.dot(&c)).max(0.0))
}

fn ls_coefficients(sigma: &Matrix, j: usize, support: &[usize]) -> Vector {
    if support.is_empty() {
        return Vector::zeros(0);
    }
    let g = linalg::submatrix(sigma, support, support);
    let c = Vector::from_iterator(support.len(), support.iter().map(|&k| sigma[(k, j)]));
    match nalgebra::Cholesky::new(g) {
        Some(chol) => chol.solve(&c),
        None => Vector::zeros(support.len()),
    }
}

struct Scorer<'a> {
    sigma: &'a Matrix,
    lambda: f64,
    max_parents: usize,
}

impl<'a> Scorer<'a> {
    fn new(sigma: &'a Matrix, n: usize, lambda: f64) -> Self {
        let p = sigma.nrows();
        // at most 0.5·n/log p parents per node
        let cap = (0.5 * n as f64 / (p as f64).ln().max(f64::MIN_POSITIVE)).floor();
        Self {
            sigma,
            lambda,
            max_parents: if cap.is_finite() { cap as usize } else { usize::MAX },
        }
    }

    fn curve(&self, j: usize, preds: &[usize]) -> Curve {
        let kmax = preds.len().min(self.max_parents);
        if preds.len() <= EXHAUSTIVE_SUBSET_LIMIT {
            let mut rss = vec![f64::INFINITY; kmax + 1];
            let mut support = vec![Vec::new(); kmax + 1];
            for mask in 0u32..(1 << preds.len()) {
                let k = mask.count_ones() as usize;
                if k > kmax {
                    continue;
                }
                let s: Vec<usize> = (0..preds.len()).filter(|b| mask >> b & 1 == 1).map(|b| preds[b]).collect();
                if let Some(r) = ls_rss(self.sigma, j, &s) {
                    // strict improvement keeps the first subset in mask order
                    if r < rss[k] {
                        rss[k] = r;
                        support[k] = s;
                    }
                }
            }
            Curve { rss, support }
        } else {
            let mut chosen: Vec<usize> = Vec::new();
            let mut rss = vec![self.sigma[(j, j)]];
            let mut support = vec![Vec::new()];
            while chosen.len() < kmax {
                let mut best: Option<(f64, usize)> = None;
                for &k in preds.iter().filter(|k| !chosen.contains(k)) {
                    let mut s = chosen.clone();
                    s.push(k);
                    if let Some(r) = ls_rss(self.sigma, j, &s) {
                        if best.is_none_or(|(b, _)| r < b) {
                            best = Some((r, k));
                        }
                    }
                }
                let Some((r, k)) = best else { break };
                chosen.push(k);
                rss.push(r);
                support.push(chosen.clone());
            }
            Curve { rss, support }
        }
    }

    /// Exact minimization of p·log(Σⱼ rssⱼ(kⱼ)/p) + λ²Σⱼkⱼ over the sizes.
    fn allocate(&self, curves: &[&Curve]) -> (Vec<usize>, f64) {
        let p = curves.len();
        let total: usize = curves.iter().map(|c| c.rss.len() - 1).sum();
        // best[s] = least residual sum using s edges among the nodes seen so far
        let mut best = vec![f64::INFINITY; total + 1];
        best[0] = 0.0;
        let mut choice: Vec<Vec<usize>> = Vec::with_capacity(p);
        let mut reach = 0;
        for c in curves {
            let kmax = c.rss.len() - 1;
            let mut next = vec![f64::INFINITY; total + 1];
            let mut arg = vec![0usize; total + 1];
            for s in 0..=reach {
                if !best[s].is_finite() {
                    continue;
                }
                for k in 0..=kmax {
                    let v = best[s] + c.rss[k];
                    if v < next[s + k] {
                        next[s + k] = v;
                        arg[s + k] = k;
                    }
                }
            }
            reach += kmax;
            best = next;
            choice.push(arg);
        }
        let lam2 = self.lambda * self.lambda;
        let mut best_s = 0;
        let mut best_score = f64::INFINITY;
        for (s, &r) in best.iter().enumerate() {
            if !r.is_finite() {
                continue;
            }
            let score = p as f64 * (r / p as f64).ln() + lam2 * s as f64;
            if score < best_score {
                best_score = score;
                best_s = s;
            }
        }
        let mut ks = vec![0; p];
        let mut s = best_s;
        for node in (0..p).rev() {
            ks[node] = choice[node][s];
            s -= ks[node];
        }
        (ks, best_score)
    }

    fn evaluate(&self, ordering: &[usize], mut curve_of: impl FnMut(usize, &[usize]) -> Curve) -> OrderingScore {
        let p = ordering.len();
        let curves: Vec<Curve> = (0..p).map(|r| curve_of(ordering[r], &ordering[..r])).collect();
        let refs: Vec<&Curve> = curves.iter().collect();
        let (ks, score) = self.allocate(&refs);
        let mut b_hat = Matrix::zeros(p, p);
        let mut residual_variances = Vector::zeros(p);
        let mut edge_count = 0;
        for r in 0..p {
            let j = ordering[r];
            let support = &curves[r].support[ks[r]];
            let coef = ls_coefficients(self.sigma, j, support);
            for (a, &k) in support.iter().enumerate() {
                b_hat[(k, j)] = coef[a];
            }
            residual_variances[j] = curves[r].rss[ks[r]];
            edge_count += ks[r];
        }
        OrderingScore {
            ordering: ordering.to_vec(),
            b_hat,
            omega_hat_sq: residual_variances.sum() / p as f64,
            residual_variances,
            edge_count,
            score,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrderingScore {
    pub ordering: Vec<usize>,
    /// Least-squares weights on the selected supports.
    pub b_hat: Matrix,
    /// rssⱼ (mean squared residuals) indexed by node.
    pub residual_variances: Vector,
    pub omega_hat_sq: f64,
    pub edge_count: usize,
    pub score: f64,
}

/// λ = c·√(log p/n) with c = 1.
pub fn default_lambda(p: usize, n: usize) -> f64 {
    ((p as f64).ln() / n as f64).sqrt()
}

fn gram(data: &DataMatrix) -> Matrix {
    let x = data.values();
    let mut s = x.tr_mul(x) / data.n() as f64;
    linalg::mirror_upper(&mut s);
    s
}

pub fn score_ordering(data: &DataMatrix, pi: &[usize], lambda: f64) -> Result<OrderingScore> {
    positions(pi, data.p())?;
    check_lambda(lambda)?;
    let sigma = gram(data);
    let scorer = Scorer::new(&sigma, data.n(), lambda);
    Ok(scorer.evaluate(pi, |j, preds| scorer.curve(j, preds)))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Exhaustive,
    /// Adjacent-transposition hill climbing from 16 random starts.
    Greedy { seed: u64 },
}

const GREEDY_STARTS: usize = 16;

/// Lower score wins; equal scores go to the lexicographically smaller ordering.
fn better(a: &OrderingScore, b: &OrderingScore) -> bool {
    a.score < b.score || (a.score == b.score && a.ordering < b.ordering)
}

pub fn search_ordering(data: &DataMatrix, lambda: f64, mode: SearchMode) -> Result<OrderingScore> {
    check_lambda(lambda)?;
    let p = data.p();
    let sigma = gram(data);
    let scorer = Scorer::new(&sigma, data.n(), lambda);
    match mode {
        SearchMode::Exhaustive => {
            if p > EXHAUSTIVE_ORDERING_LIMIT {
                return Err(Error::TooLargeForExhaustive(p));
            }
            // one curve per (node, predecessor set)
            let curves: Vec<Option<Curve>> = (0..p * (1usize << p))
                .into_par_iter()
                .map(|idx| {
                    let (j, mask) = (idx >> p, idx & ((1 << p) - 1));
                    if mask >> j & 1 == 1 {
                        return None;
                    }
                    let preds: Vec<usize> = (0..p).filter(|k| mask >> k & 1 == 1).collect();
                    Some(scorer.curve(j, &preds))
                })
                .collect();
            let perms: Vec<Vec<usize>> = (0..p).permutations(p).collect();
            let best = perms
                .par_iter()
                .map(|pi| {
                    scorer.evaluate(pi, |j, preds| {
                        let mask = preds.iter().fold(0usize, |m, &k| m | 1 << k);
                        curves[(j << p) | mask].clone().expect("node is not its own predecessor")
                    })
                })
                .reduce_with(|a, b| if better(&b, &a) { b } else { a })
                .expect("at least one ordering");
            Ok(best)
        }
        SearchMode::Greedy { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let starts: Vec<Vec<usize>> = (0..GREEDY_STARTS)
                .map(|_| {
                    let mut pi: Vec<usize> = (0..p).collect();
                    pi.shuffle(&mut rng);
                    pi
                })
                .collect();
            let best = starts
                .into_par_iter()
                .map(|start| hill_climb(&scorer, start))
                .reduce_with(|a, b| if better(&b, &a) { b } else { a })
                .expect("at least one start");
            Ok(best)
        }
    }
}

fn hill_climb(scorer: &Scorer<'_>, start: Vec<usize>) -> OrderingScore {
    let mut memo: HashMap<(usize, Vec<usize>), Curve> = HashMap::new();
    let mut eval = |pi: &[usize]| {
        scorer.evaluate(pi, |j, preds| {
            let mut key = preds.to_vec();
            key.sort_unstable();
            memo.entry((j, key)).or_insert_with(|| scorer.curve(j, preds)).clone()
        })
    };
    let mut current = eval(&start);
    loop {
        let mut best: Option<OrderingScore> = None;
        for r in 0..current.ordering.len().saturating_sub(1) {
            let mut pi = current.ordering.clone();
            pi.swap(r, r + 1);
            let cand = eval(&pi);
            if better(&cand, &current) && best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
        match best {
            Some(b) => current = b,
            None => return current,
        }
    }
}

/// Predecessors of j under `ordering`, in ordering order.
pub fn predecessors(ordering: &[usize], j: usize) -> Vec<usize> {
    ordering.iter().take_while(|&&k| k != j).copied().collect()
}

fn gram_system(sigma: &Matrix, j: usize, preds: &[usize]) -> GramSystem {
    GramSystem {
        gram: linalg::submatrix(sigma, preds, preds),
        xty: Vector::from_iterator(preds.len(), preds.iter().map(|&k| sigma[(k, j)])),
        yty: sigma[(j, j)],
    }
}

/// Lasso of Xⱼ on its predecessors: ‖Xⱼ − X_Pβ‖²/n + 2λⱼ‖β‖₁.
pub fn predecessor_regression(data: &DataMatrix, ordering: &[usize], j: usize, lambda_j: f64) -> Result<Vector> {
    positions(ordering, data.p())?;
    check_lambda(lambda_j)?;
    let sigma = gram(data);
    Ok(regress(&sigma, j, &predecessors(ordering, j), lambda_j))
}

fn regress(sigma: &Matrix, j: usize, preds: &[usize], lambda: f64) -> Vector {
    if preds.is_empty() {
        return Vector::zeros(0);
    }
    let sys = gram_system(sigma, j, preds);
    let w = Vector::from_element(preds.len(), 1.0);
    lasso::solve_lasso_gram(&sys, lambda, &w, None, &SolverOptions::default()).coefficients
}

/// Nodewise-Lasso surrogate for the inverse of Σ̂_PP: column a regresses
/// X_{P[a]} on the other predecessors with penalty 2λ‖γ‖₁ and is scaled
/// by τ² = ‖r‖²/n + λ‖γ‖₁.
fn surrogate_inverse(sigma: &Matrix, preds: &[usize], lambda: f64) -> Result<Matrix> {
    let m = preds.len();
    let mut theta = Matrix::zeros(m, m);
    for a in 0..m {
        let k = preds[a];
        let rest: Vec<usize> = preds.iter().copied().filter(|&l| l != k).collect();
        let gamma = regress(sigma, k, &rest, lambda);
        let sys = gram_system(sigma, k, &rest);
        let tau_sq = if rest.is_empty() {
            sigma[(k, k)]
        } else {
            sys.rss(&gamma) + lambda * gamma.iter().map(|g| g.abs()).sum::<f64>()
        };
        if !(tau_sq > 0.0) {
            return Err(Error::DegenerateResidual(tau_sq.max(0.0).sqrt()));
        }
        theta[(a, a)] = 1.0 / tau_sq;
        let mut b = 0;
        for l in 0..m {
            if l != a {
                theta[(l, a)] = -gamma[b] / tau_sq;
                b += 1;
            }
        }
    }
    Ok(theta)
}

#[derive(Debug, Clone)]
pub struct DagColumn {
    pub node: usize,
    pub predecessors: Vec<usize>,
    pub beta_hat: Vector,
    pub b_debiased: Vector,
    /// σ̂ₖⱼ for each predecessor.
    pub sigma: Vector,
    /// ω̂ⱼ
    pub omega_hat: f64,
}

/// b̂ⱼ = β̂ⱼ + Θ̂ᵀX_Pᵀ(Xⱼ − X_Pβ̂ⱼ)/n with σ̂²ₖⱼ = ω̂ⱼ²Θ̂ₖₖ.
pub fn debias_dag_column(data: &DataMatrix, ordering: &[usize], j: usize, lambda_j: f64, lambda_kj: f64) -> Result<DagColumn> {
    positions(ordering, data.p())?;
    check_lambda(lambda_j)?;
    check_lambda(lambda_kj)?;
    let sigma = gram(data);
    column_from_gram(&sigma, ordering, j, lambda_j, lambda_kj)
}

fn column_from_gram(sigma: &Matrix, ordering: &[usize], j: usize, lambda_j: f64, lambda_kj: f64) -> Result<DagColumn> {
    let preds = predecessors(ordering, j);
    let beta = regress(sigma, j, &preds, lambda_j);
    let sys = gram_system(sigma, j, &preds);
    let omega_sq = if preds.is_empty() { sigma[(j, j)] } else { sys.rss(&beta) };
    if preds.is_empty() {
        return Ok(DagColumn {
            node: j,
            predecessors: preds,
            beta_hat: beta.clone(),
            b_debiased: beta,
            sigma: Vector::zeros(0),
            omega_hat: omega_sq.sqrt(),
        });
    }
    let theta = surrogate_inverse(sigma, &preds, lambda_kj)?;
    let corr = sys.residual_correlation(&beta);
    let b = &beta + theta.tr_mul(&corr);
    let sd = Vector::from_fn(preds.len(), |a, _| (omega_sq * theta[(a, a)]).sqrt());
    Ok(DagColumn {
        node: j,
        predecessors: preds,
        beta_hat: beta,
        b_debiased: b,
        sigma: sd,
        omega_hat: omega_sq.sqrt(),
    })
}

#[derive(Debug, Clone)]
pub struct DagOptions {
    /// λ of the ordering score.
    pub lambda: f64,
    /// λⱼ of the predecessor regressions.
    pub lambda_j: f64,
    /// λₖⱼ of the surrogate inverse.
    pub lambda_kj: f64,
    pub mode: SearchMode,
    /// Skips the search.
    pub known_ordering: Option<Vec<usize>>,
}

impl DagOptions {
    pub fn new(p: usize, n: usize) -> Self {
        let l = default_lambda(p, n);
        Self {
            lambda: l,
            lambda_j: l,
            lambda_kj: l,
            mode: SearchMode::Exhaustive,
            known_ordering: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DagFit {
    pub ordering_hat: Vec<usize>,
    /// Indexed by node.
    pub columns: Vec<DagColumn>,
    /// Present when the ordering was searched.
    pub score: Option<OrderingScore>,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeInterval {
    pub k: usize,
    pub j: usize,
    pub beta_hat: f64,
    pub b_debiased: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl DagFit {
    /// b̂ₖⱼ ± z σ̂ₖⱼ/√n for every predecessor pair, by node then ordering.
    pub fn intervals(&self, alpha: f64) -> Result<Vec<EdgeInterval>> {
        check_alpha(alpha)?;
        let z = stats::two_sided_z(alpha);
        let rn = (self.n as f64).sqrt();
        let mut out = Vec::new();
        for c in &self.columns {
            for (a, &k) in c.predecessors.iter().enumerate() {
                let half = z * c.sigma[a] / rn;
                out.push(EdgeInterval {
                    k,
                    j: c.node,
                    beta_hat: c.beta_hat[a],
                    b_debiased: c.b_debiased[a],
                    sigma: c.sigma[a],
                    lower: c.b_debiased[a] - half,
                    upper: c.b_debiased[a] + half,
                });
            }
        }
        Ok(out)
    }
}

pub fn fit_dag(data: &DataMatrix, opts: &DagOptions) -> Result<DagFit> {
    let p = data.p();
    let (ordering, score) = match &opts.known_ordering {
        Some(pi) => {
            positions(pi, p)?;
            (pi.clone(), None)
        }
        None => {
            let s = search_ordering(data, opts.lambda, opts.mode)?;
            (s.ordering.clone(), Some(s))
        }
    };
    check_lambda(opts.lambda_j)?;
    check_lambda(opts.lambda_kj)?;
    let sigma = gram(data);
    let columns = (0..p)
        .into_par_iter()
        .map(|j| column_from_gram(&sigma, &ordering, j, opts.lambda_j, opts.lambda_kj))
        .collect::<Result<Vec<_>>>()?;
    Ok(DagFit {
        ordering_hat: ordering,
        columns,
        score,
        n: data.n(),
    })
}

/// Every edge of the model points forward under `ordering`.
pub fn consistent_with(model: &DagModel, ordering: &[usize]) -> bool {
    let Ok(pos) = positions(ordering, model.p()) else { return false };
    (0..model.p()).all(|j| model.parents[j].iter().all(|&k| pos[k] < pos[j]))
}
