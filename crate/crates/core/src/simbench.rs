// SPDX-License-Identifier: Apache-2.0
//! Simulation models, seeded sampling, benchmark estimators and the
//! Monte-Carlo coverage harness.
//!
//! Every replicate r draws from its own stream seeded by mix(seed, ·), so
//! tables are bit-reproducible at any thread count and tables from disjoint
//! replicate ranges merge exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dag::DagModel;
use crate::error::{Error, Result};
use crate::glasso::{self, GlassoConfig, GlassoFit, GlassoState, GlassoVariant};
use crate::inference::{self, check_alpha, DebiasedEstimate};
use crate::io::Precision;
use crate::linalg::{self, Matrix};
use crate::model::{pattern_from_matrix, sample_covariance, spectrum_diagnostic, CovarianceEstimate, DataMatrix, PrecisionEstimate, Provenance, SparsityPattern};
use crate::nodewise::{self, NodewiseMethod};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Two five-diagonal blocks, (1, 0.5, 0.4) and (2, 1, 0.6).
    Model1,
    /// Seeded sparse random graph with edge probability 0.07, rescaled to
    /// unit implied variances.
    Model2Like,
    /// Θ⁰ᵢⱼ = 0.5^|i−j|
    Model3,
    /// Precision matrix of a random equal-variance DAG.
    CustomDag,
}

/// Population precision matrix. `seed` only matters for the random models.
pub fn make_model(model: ModelKind, p: usize, seed: u64) -> Result<PrecisionEstimate> {
    if p < 2 {
        return Err(Error::InvalidInput("p must be at least 2".into()));
    }
    let theta = match model {
        ModelKind::Model1 => {
            if !p.is_multiple_of(2) {
                return Err(Error::InvalidInput(format!("model1 needs an even p, got {p}")));
            }
            let h = p / 2;
            let mut t = Matrix::zeros(p, p);
            for (block, (a, b, c)) in [(1.0, 0.5, 0.4), (2.0, 1.0, 0.6)].into_iter().enumerate() {
                let o = block * h;
                for i in 0..h {
                    for j in 0..h {
                        t[(o + i, o + j)] = match i.abs_diff(j) {
                            0 => a,
                            1 => b,
                            2 => c,
                            _ => 0.0,
                        };
                    }
                }
            }
            t
        }
        ModelKind::Model3 => Matrix::from_fn(p, p, |i, j| 0.5_f64.powi(i.abs_diff(j) as i32)),
        ModelKind::Model2Like => model2_like(p, 0.07, seed)?,
        ModelKind::CustomDag => make_dag_instance(p, 0.1, (0.3, 0.8), 1.0, seed)?.theta0(),
    };
    if !spectrum_diagnostic(&theta)?.is_positive_definite() {
        return Err(Error::NotPositiveDefinite);
    }
    PrecisionEstimate::population(theta)
}

/// Bernoulli(prob) edges with weights ±U[0.3, 1], diagonal = absolute row
/// sum + 0.5, then rescaled so that Θ⁻¹ is a correlation matrix.
fn model2_like(p: usize, prob: f64, seed: u64) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Matrix::zeros(p, p);
    for j in 0..p {
        for i in 0..j {
            if rng.random::<f64>() < prob {
                let mag = rng.random_range(0.3..=1.0);
                let w = if rng.random::<bool>() { mag } else { -mag };
                t[(i, j)] = w;
                t[(j, i)] = w;
            }
        }
    }
    for i in 0..p {
        t[(i, i)] = t.row(i).iter().map(|v| v.abs()).sum::<f64>() + 0.5;
    }
    let sigma = linalg::spd_inverse(&t)?;
    let d: Vec<f64> = (0..p).map(|i| sigma[(i, i)].sqrt()).collect();
    // (D⁻¹ΣD⁻¹)⁻¹ = DΘD
    let mut out = Matrix::from_fn(p, p, |i, j| d[i] * t[(i, j)] * d[j]);
    linalg::mirror_upper(&mut out);
    Ok(out)
}

/// Random ordering, Bernoulli(edge_prob) forward edges, weights uniform on
/// ±[lo, hi], equal error scale ω.
pub fn make_dag_instance(p: usize, edge_prob: f64, beta_range: (f64, f64), omega: f64, seed: u64) -> Result<DagModel> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidInput(format!("edge probability {edge_prob} outside [0, 1]")));
    }
    let (lo, hi) = beta_range;
    if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid weight range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ordering: Vec<usize> = (0..p).collect();
    ordering.shuffle(&mut rng);
    let mut b = Matrix::zeros(p, p);
    for a in 0..p {
        for c in a + 1..p {
            if rng.random::<f64>() < edge_prob {
                let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let w = if rng.random::<bool>() { mag } else { -mag };
                b[(ordering[a], ordering[c])] = w;
            }
        }
    }
    DagModel::new(b, omega, ordering)
}

/// Draws rows Lz with Σ₀ = LLᵀ and z standard normal.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    l: Matrix,
}

impl GaussianSampler {
    pub fn new(theta0: &PrecisionEstimate) -> Result<Self> {
        let sigma = linalg::spd_inverse(&theta0.theta)?;
        Ok(Self {
            l: linalg::cholesky(&sigma)?.l(),
        })
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<DataMatrix> {
        let p = self.l.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = Matrix::from_row_slice(n, p, &z);
        DataMatrix::new(z * self.l.transpose())
    }
}

pub fn sample_gaussian(theta0: &PrecisionEstimate, n: usize, seed: u64) -> Result<DataMatrix> {
    GaussianSampler::new(theta0)?.sample(n, seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 combination of a master seed and a stream index.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Θ̂ = Σ̂⁻¹
pub fn mle_estimator(cov: &CovarianceEstimate) -> Result<PrecisionEstimate> {
    let theta = linalg::spd_inverse(&cov.sigma_hat).map_err(|_| Error::SingularCovariance)?;
    Ok(PrecisionEstimate::new(theta, Provenance::Mle, 0.0))
}

/// Gaussian MLE with Θᵢⱼ = 0 off the pattern, by iterative proportional
/// scaling in its column-wise regression form: each column of W solves the
/// normal equations restricted to the neighbours of the node.
pub fn oracle_mle(cov: &CovarianceEstimate, pattern: &SparsityPattern) -> Result<PrecisionEstimate> {
    let s = &cov.sigma_hat;
    let p = s.nrows();
    if pattern.p() != p {
        return Err(Error::dims(p, pattern.p()));
    }
    let nbrs: Vec<Vec<usize>> = (0..p)
        .map(|j| (0..p).filter(|&k| k != j && (pattern.contains(k, j) || pattern.contains(j, k))).collect())
        .collect();
    let scale = linalg::max_abs(s).max(f64::MIN_POSITIVE);
    let mut w = s.clone();
    let mut beta: Vec<Vec<f64>> = vec![Vec::new(); p];
    const MAX_SWEEPS: usize = 10_000;
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut change = 0.0_f64;
        for j in 0..p {
            let nb = &nbrs[j];
            let b = if nb.is_empty() {
                Vec::new()
            } else {
                let g = linalg::submatrix(&w, nb, nb);
                let c = crate::linalg::Vector::from_iterator(nb.len(), nb.iter().map(|&k| s[(k, j)]));
                let chol = nalgebra::Cholesky::new(g).ok_or(Error::NotPositiveDefinite)?;
                chol.solve(&c).iter().copied().collect()
            };
            for k in (0..p).filter(|&k| k != j) {
                let v: f64 = nb.iter().zip(&b).map(|(&l, bl)| w[(k, l)] * bl).sum();
                change = change.max((v - w[(k, j)]).abs());
                w[(k, j)] = v;
                w[(j, k)] = v;
            }
            beta[j] = b;
        }
        if change <= 1e-13 * scale {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NotConverged {
                what: "oracle maximum likelihood",
                iterations: sweeps,
            });
        }
    }
    let mut theta = Matrix::zeros(p, p);
    for j in 0..p {
        let quad: f64 = nbrs[j].iter().zip(&beta[j]).map(|(&k, b)| w[(k, j)] * b).sum();
        let tjj = 1.0 / (s[(j, j)] - quad);
        if !(tjj > 0.0 && tjj.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        theta[(j, j)] = tjj;
        for (&k, b) in nbrs[j].iter().zip(&beta[j]) {
            theta[(k, j)] = -b * tjj;
        }
    }
    let theta = linalg::symmetrize(&theta);
    let resid = oracle_stationarity(&theta, s, &nbrs)?;
    if resid > 1e-8 * scale {
        return Err(Error::NotConverged {
            what: "oracle maximum likelihood",
            iterations: sweeps,
        });
    }
    Ok(PrecisionEstimate::new(theta, Provenance::Oracle, 0.0))
}

/// max |(Θ⁻¹)ᵢⱼ − Σ̂ᵢⱼ| over the pattern and the diagonal.
fn oracle_stationarity(theta: &Matrix, s: &Matrix, nbrs: &[Vec<usize>]) -> Result<f64> {
    let inv = linalg::spd_inverse(theta)?;
    let mut worst = 0.0_f64;
    for j in 0..s.nrows() {
        worst = worst.max((inv[(j, j)] - s[(j, j)]).abs());
        for &k in &nbrs[j] {
            worst = worst.max((inv[(k, j)] - s[(k, j)]).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct PerfectReference {
    /// 2·z·σᵢⱼ/√n with σ²ᵢⱼ = Θ⁰ᵢᵢΘ⁰ⱼⱼ + (Θ⁰ᵢⱼ)².
    pub lengths: Matrix,
    /// 100(1 − α)
    pub coverage: f64,
}

pub fn perfect_reference(theta0: &PrecisionEstimate, n: usize, alpha: f64) -> Result<PerfectReference> {
    check_alpha(alpha)?;
    let sd = inference::variance_estimates(theta0)?;
    let z = stats::two_sided_z(alpha);
    let rn = (n as f64).sqrt();
    Ok(PerfectReference {
        lengths: sd.map(|s| 2.0 * z * s / rn),
        coverage: 100.0 * (1.0 - alpha),
    })
}

/// `points` log-spaced values on [0.01, 10]·√(log p/n).
pub fn lambda_grid(p: usize, n: usize, points: usize) -> Vec<f64> {
    let base = nodewise::universal_lambda(p, n);
    if points <= 1 {
        return vec![base];
    }
    let (lo, hi) = (0.01_f64.log10(), 10.0_f64.log10());
    (0..points)
        .map(|k| base * 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ValidationPath {
    pub lambda: f64,
    /// Validation loss per grid point (NaN where the fit failed).
    pub losses: Vec<f64>,
    pub fit: GlassoFit,
}

/// Fits the graphical Lasso on `train` for each grid value (largest first,
/// warm-started) and keeps the λ with the least validation loss
/// tr(Σ̂_val Θ̂) − log det Θ̂; ties go to the smaller λ.
pub fn select_lambda_validation(
    train: &CovarianceEstimate,
    validation: &CovarianceEstimate,
    grid: &[f64],
    variant: GlassoVariant,
) -> Result<ValidationPath> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut losses = vec![f64::NAN; grid.len()];
    let mut fits: Vec<Option<GlassoFit>> = vec![None; grid.len()];
    let mut warm: Option<GlassoState> = None;
    for &g in &order {
        let cfg = GlassoConfig::new(grid[g], variant);
        let Ok(fit) = glasso::solve_graphical_lasso_warm(train, &cfg, warm.as_ref()) else {
            continue;
        };
        if let Ok(loss) = linalg::gaussian_loss(cfg.target(validation), &fit.estimate.theta) {
            losses[g] = loss;
            warm = Some(fit.state.clone());
            fits[g] = Some(fit);
        }
    }
    let mut best: Option<usize> = None;
    for g in 0..grid.len() {
        if losses[g].is_nan() {
            continue;
        }
        best = match best {
            Some(b) if losses[b] < losses[g] || (losses[b] == losses[g] && grid[b] <= grid[g]) => Some(b),
            _ => Some(g),
        };
    }
    let b = best.ok_or(Error::AllFitsFailed)?;
    Ok(ValidationPath {
        lambda: grid[b],
        losses,
        fit: fits[b].take().expect("fit stored with its loss"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "glasso")]
    Glasso,
    #[serde(rename = "glasso-weigh")]
    GlassoWeigh,
    #[serde(rename = "node-sqrt")]
    NodeSqrt,
    #[serde(rename = "node-sqrt-tau")]
    NodeSqrtTau,
    #[serde(rename = "node")]
    Node,
    #[serde(rename = "mle")]
    Mle,
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "perfect")]
    Perfect,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Glasso,
        Method::GlassoWeigh,
        Method::NodeSqrt,
        Method::NodeSqrtTau,
        Method::Node,
        Method::Mle,
        Method::Oracle,
        Method::Perfect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Glasso => "glasso",
            Method::GlassoWeigh => "glasso-weigh",
            Method::NodeSqrt => "node-sqrt",
            Method::NodeSqrtTau => "node-sqrt-tau",
            Method::Node => "node",
            Method::Mle => "mle",
            Method::Oracle => "oracle",
            Method::Perfect => "perfect",
        }
    }

    fn nodewise(self) -> Option<NodewiseMethod> {
        match self {
            Method::NodeSqrt => Some(NodewiseMethod::NodeSqrt),
            Method::NodeSqrtTau => Some(NodewiseMethod::NodeSqrtTau),
            Method::Node => Some(NodewiseMethod::Node),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == t)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// λ = √(log p/n) for every method.
    Universal,
    /// Graphical Lasso rows tuned on a fresh validation sample of size n;
    /// nodewise rows keep the universal λ.
    ValidationGrid,
}

fn default_grid_points() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub p: usize,
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub lambda_policy: LambdaPolicy,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Index of the first replicate; disjoint ranges merge exactly.
    #[serde(default)]
    pub first_replicate: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if self.n < 2 || self.p < 2 {
            return Err(Error::InvalidInput("n and p must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods requested".into()));
        }
        if self.grid_points == 0 {
            return Err(Error::InvalidInput("grid_points must be at least 1".into()));
        }
        Ok(())
    }

    /// JSON object, or flat `key = value` lines (`#` comments; `methods` is a
    /// comma-separated list).
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let cfg: Self = if trimmed.starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            let mut map = serde_json::Map::new();
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: format!("expected key = value, found '{line}'"),
                })?;
                let (k, v) = (k.trim(), v.trim());
                let value = if k == "methods" {
                    serde_json::Value::Array(
                        v.split(',').map(|m| serde_json::Value::String(m.trim().to_string())).collect(),
                    )
                } else if let Ok(u) = v.parse::<u64>() {
                    serde_json::Value::from(u)
                } else if let Ok(f) = v.parse::<f64>() {
                    serde_json::Value::from(f)
                } else {
                    serde_json::Value::String(v.to_string())
                };
                map.insert(k.to_string(), value);
            }
            serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Parse {
                line: 0,
                message: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Interval outcomes of one method on one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub covered_s0: f64,
    pub count_s0: usize,
    pub covered_s0c: f64,
    pub count_s0c: usize,
    pub length_sum_s0: f64,
    pub length_sum_s0c: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: Method,
    /// Sorted by replicate index.
    pub records: Vec<ReplicateRecord>,
    pub failures: usize,
}

impl MethodRow {
    fn ratio(&self, num: impl Fn(&ReplicateRecord) -> f64, den: impl Fn(&ReplicateRecord) -> f64) -> f64 {
        let a: f64 = self.records.iter().map(&num).sum();
        let b: f64 = self.records.iter().map(&den).sum();
        a / b
    }

    pub fn coverage_s0(&self) -> f64 {
        100.0 * self.ratio(|r| r.covered_s0, |r| r.count_s0 as f64)
    }

    pub fn coverage_s0c(&self) -> f64 {
        100.0 * self.ratio(|r| r.covered_s0c, |r| r.count_s0c as f64)
    }

    pub fn coverage_all(&self) -> f64 {
        100.0 * self.ratio(|r| r.covered_s0 + r.covered_s0c, |r| (r.count_s0 + r.count_s0c) as f64)
    }

    pub fn length_s0(&self) -> f64 {
        self.ratio(|r| r.length_sum_s0, |r| r.count_s0 as f64)
    }

    pub fn length_s0c(&self) -> f64 {
        self.ratio(|r| r.length_sum_s0c, |r| r.count_s0c as f64)
    }

    pub fn length_all(&self) -> f64 {
        self.ratio(|r| r.length_sum_s0 + r.length_sum_s0c, |r| (r.count_s0 + r.count_s0c) as f64)
    }

    pub fn avg_lambda(&self) -> f64 {
        self.records.iter().map(|r| r.lambda).sum::<f64>() / self.records.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTable {
    pub rows: Vec<MethodRow>,
}

impl CoverageTable {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Union of two runs over disjoint replicate ranges.
    pub fn merge(&self, other: &CoverageTable) -> Result<CoverageTable> {
        let mut by: BTreeMap<Method, MethodRow> = BTreeMap::new();
        let mut order = Vec::new();
        for row in self.rows.iter().chain(&other.rows) {
            match by.get_mut(&row.method) {
                Some(acc) => {
                    acc.records.extend(row.records.iter().copied());
                    acc.failures += row.failures;
                }
                None => {
                    order.push(row.method);
                    by.insert(row.method, row.clone());
                }
            }
        }
        let mut rows = Vec::new();
        for m in order {
            let mut row = by.remove(&m).expect("inserted above");
            row.records.sort_by_key(|r| r.replicate);
            if row.records.windows(2).any(|w| w[0].replicate == w[1].replicate) {
                return Err(Error::InvalidInput(format!("overlapping replicates for {m}")));
            }
            rows.push(row);
        }
        Ok(CoverageTable { rows })
    }

    pub fn write_csv<W: Write>(&self, out: W, precision: Precision) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record([
            "method",
            "coverage_S0",
            "coverage_S0c",
            "length_S0",
            "length_S0c",
            "coverage_all",
            "length_all",
            "avg_lambda",
            "replicates",
            "failures",
        ])
        .map_err(io)?;
        for r in &self.rows {
            let f = |v: f64| precision.format(v);
            w.write_record([
                r.method.name().to_string(),
                f(r.coverage_s0()),
                f(r.coverage_s0c()),
                f(r.length_s0()),
                f(r.length_s0c()),
                f(r.coverage_all()),
                f(r.length_all()),
                f(r.avg_lambda()),
                r.records.len().to_string(),
                r.failures.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Truth {
    theta0: PrecisionEstimate,
    pattern: SparsityPattern,
    mask: Vec<Vec<bool>>,
}

fn record(replicate: usize, truth: &Truth, lengths: &Matrix, covered: impl Fn(usize, usize) -> f64, lambda: f64) -> ReplicateRecord {
    let p = truth.theta0.p();
    let mut rec = ReplicateRecord {
        replicate,
        covered_s0: 0.0,
        count_s0: 0,
        covered_s0c: 0.0,
        count_s0c: 0,
        length_sum_s0: 0.0,
        length_sum_s0c: 0.0,
        lambda,
    };
    for i in 0..p {
        for j in 0..p {
            if truth.mask[i][j] {
                rec.covered_s0 += covered(i, j);
                rec.count_s0 += 1;
                rec.length_sum_s0 += lengths[(i, j)];
            } else {
                rec.covered_s0c += covered(i, j);
                rec.count_s0c += 1;
                rec.length_sum_s0c += lengths[(i, j)];
            }
        }
    }
    rec
}

fn interval_record(replicate: usize, truth: &Truth, deb: &DebiasedEstimate, alpha: f64, lambda: f64) -> Result<ReplicateRecord> {
    let ci = inference::confidence_intervals(deb, alpha)?;
    let lengths = ci.half_width.map(|h| 2.0 * h);
    let t0 = &truth.theta0.theta;
    Ok(record(replicate, truth, &lengths, |i, j| f64::from(u8::from(ci.covers(i, j, t0[(i, j)]))), lambda))
}

fn run_replicate(cfg: &ExperimentConfig, truth: &Truth, sampler: &GaussianSampler, r: usize) -> Vec<Result<ReplicateRecord>> {
    let universal = nodewise::universal_lambda(cfg.p, cfg.n);
    let data = sampler.sample(cfg.n, mix_seed(cfg.seed, 2 * r as u64));
    let cov = data.and_then(|d| sample_covariance(&d, false));
    let needs_validation = cfg.lambda_policy == LambdaPolicy::ValidationGrid
        && cfg.methods.iter().any(|m| matches!(m, Method::Glasso | Method::GlassoWeigh));
    let validation = if needs_validation {
        Some(sampler.sample(cfg.n, mix_seed(cfg.seed, 2 * r as u64 + 1)).and_then(|d| sample_covariance(&d, false)))
    } else {
        None
    };
    let mut sqrt_fits: Option<Vec<nodewise::NodewiseColumnFit>> = None;
    cfg.methods
        .iter()
        .map(|&m| {
            if m == Method::Perfect {
                let perf = perfect_reference(&truth.theta0, cfg.n, cfg.alpha)?;
                return Ok(record(r, truth, &perf.lengths, |_, _| 1.0 - cfg.alpha, 0.0));
            }
            let cov = cov.as_ref().map_err(|e| Error::InvalidInput(format!("sampling failed: {e}")))?;
            match m {
                Method::Glasso | Method::GlassoWeigh => {
                    let variant = if m == Method::Glasso { GlassoVariant::Plain } else { GlassoVariant::Weighted };
                    let (est, lambda) = match &validation {
                        Some(val) => {
                            let val = val.as_ref().map_err(|e| Error::InvalidInput(format!("sampling failed: {e}")))?;
                            let grid = lambda_grid(cfg.p, cfg.n, cfg.grid_points);
                            let path = select_lambda_validation(cov, val, &grid, variant)?;
                            (path.fit.estimate, path.lambda)
                        }
                        None => {
                            let fit = glasso::solve_graphical_lasso(cov, &GlassoConfig::new(universal, variant))?;
                            (fit.estimate, universal)
                        }
                    };
                    let deb = DebiasedEstimate::new(&est, cov, false)?;
                    interval_record(r, truth, &deb, cfg.alpha, lambda)
                }
                Method::NodeSqrt | Method::NodeSqrtTau | Method::Node => {
                    let nm = m.nodewise().expect("nodewise method");
                    let ncfg = nm.config(universal);
                    // node-sqrt and node-sqrt-tau share their regressions
                    let est = if ncfg.regressor == nodewise::Regressor::SqrtLasso {
                        if sqrt_fits.is_none() {
                            sqrt_fits = Some(nodewise::estimate_nodewise(cov, &ncfg)?.fits);
                        }
                        let fits = sqrt_fits.clone().expect("computed above");
                        nodewise::assemble_precision(fits, ncfg.tau_variant, ncfg.regressor)?
                    } else {
                        nodewise::estimate_nodewise(cov, &ncfg)?
                    };
                    let deb = DebiasedEstimate::new(&est.to_precision(), cov, false)?;
                    interval_record(r, truth, &deb, cfg.alpha, universal)
                }
                Method::Mle => {
                    let est = mle_estimator(cov)?;
                    let deb = DebiasedEstimate::without_correction(&est, cfg.n)?;
                    interval_record(r, truth, &deb, cfg.alpha, 0.0)
                }
                Method::Oracle => {
                    let est = oracle_mle(cov, &truth.pattern)?;
                    let deb = DebiasedEstimate::without_correction(&est, cfg.n)?;
                    interval_record(r, truth, &deb, cfg.alpha, 0.0)
                }
                Method::Perfect => unreachable!("handled above"),
            }
        })
        .collect()
}

/// Runs every replicate (in parallel) and aggregates over S₀ = S ∪ diagonal
/// and its complement. Fails if more than 5% of a method's replicates fail.
pub fn run_coverage_experiment(cfg: &ExperimentConfig) -> Result<CoverageTable> {
    cfg.validate()?;
    let theta0 = make_model(cfg.model, cfg.p, mix_seed(cfg.seed, u64::MAX))?;
    let pattern = pattern_from_matrix(&theta0.theta, 0.0)?;
    let truth = Truth {
        mask: pattern.active_mask_with_diagonal(),
        pattern,
        theta0,
    };
    let sampler = GaussianSampler::new(&truth.theta0)?;
    let reps: Vec<Vec<Result<ReplicateRecord>>> = (cfg.first_replicate..cfg.first_replicate + cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &truth, &sampler, r))
        .collect();
    let mut rows: Vec<MethodRow> = cfg
        .methods
        .iter()
        .map(|&method| MethodRow {
            method,
            records: Vec::new(),
            failures: 0,
        })
        .collect();
    for rep in reps {
        for (row, res) in rows.iter_mut().zip(rep) {
            match res {
                Ok(rec) => row.records.push(rec),
                Err(_) => row.failures += 1,
            }
        }
    }
    for row in &rows {
        if row.failures * 20 > cfg.replicates {
            return Err(Error::TooManyFailures {
                failed: row.failures,
                total: cfg.replicates,
            });
        }
    }
    Ok(CoverageTable { rows })
}
