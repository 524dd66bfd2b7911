// SPDX-License-Identifier: Apache-2.0
//! Data matrices, empirical covariance and correlation, sparsity patterns
//! and spectrum diagnostics.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// An n×p matrix of observations: rows are observations, columns variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Matrix,
}

impl DataMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 observations, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 variables, got {}",
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let n = values.nrows();
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::new(Matrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    /// Columns subtracted by their means.
    pub fn centered(&self) -> DataMatrix {
        let mut v = self.values.clone();
        for mut col in v.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        DataMatrix { values: v }
    }

    pub fn scaled(&self, c: f64) -> DataMatrix {
        DataMatrix {
            values: &self.values * c,
        }
    }

    /// Columns selected in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        self.values.select_columns(cols)
    }
}

/// Σ̂ = XᵀX/n together with R̂ = Ŵ⁻¹Σ̂Ŵ⁻¹ and Ŵ = diag(Σ̂)^{1/2}.
///
/// Also used for population quantities (Σ₀, R₀, W₀) with `population = true`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma_hat: Matrix,
    pub r_hat: Matrix,
    pub w_hat: Vector,
    /// Sample size behind `sigma_hat` (0 for population matrices).
    pub n: usize,
    pub population: bool,
}

impl CovarianceEstimate {
    /// Builds the derived quantities from a symmetric matrix with positive
    /// diagonal.
    pub fn from_sigma(sigma: Matrix, n: usize, population: bool) -> Result<Self> {
        linalg::ensure_symmetric(&sigma, 1e-12)?;
        let p = sigma.nrows();
        let mut sigma = sigma;
        linalg::mirror_upper(&mut sigma);
        if let Some(j) = (0..p).find(|&j| sigma[(j, j)] <= 0.0 || !sigma[(j, j)].is_finite()) {
            return Err(Error::ZeroVarianceColumn(j));
        }
        let w_hat = Vector::from_fn(p, |j, _| sigma[(j, j)].sqrt());
        let mut r_hat = Matrix::identity(p, p);
        for j in 0..p {
            for i in 0..j {
                let r = (sigma[(i, j)] / (w_hat[i] * w_hat[j])).clamp(-1.0, 1.0);
                r_hat[(i, j)] = r;
                r_hat[(j, i)] = r;
            }
        }
        Ok(Self {
            sigma_hat: sigma,
            r_hat,
            w_hat,
            n,
            population,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma_hat.nrows()
    }
}

/// Sample covariance XᵀX/n. With `center`, column means are removed first
/// (divisor stays n).
pub fn sample_covariance(data: &DataMatrix, center: bool) -> Result<CovarianceEstimate> {
    let x = data.values();
    let (n, p) = (data.n(), data.p());
    for j in 0..p {
        let col = x.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(Error::ZeroVarianceColumn(j));
        }
    }
    let centered;
    let x = if center {
        centered = data.centered();
        centered.values()
    } else {
        x
    };
    let mut sigma = Matrix::zeros(p, p);
    let nf = n as f64;
    for j in 0..p {
        let cj = x.column(j);
        for i in 0..=j {
            sigma[(i, j)] = x.column(i).dot(&cj) / nf;
        }
    }
    linalg::mirror_upper(&mut sigma);
    CovarianceEstimate::from_sigma(sigma, n, false)
}

/// Where a precision-matrix estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Glasso,
    GlassoWeighted,
    GlassoNormalized,
    NodewiseSqrt,
    NodewiseLasso,
    Mle,
    Oracle,
    Population,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Glasso => "glasso",
            Provenance::GlassoWeighted => "glasso_weighted",
            Provenance::GlassoNormalized => "glasso_normalized",
            Provenance::NodewiseSqrt => "nodewise_sqrt",
            Provenance::NodewiseLasso => "nodewise_lasso",
            Provenance::Mle => "mle",
            Provenance::Oracle => "oracle",
            Provenance::Population => "population",
        };
        f.write_str(s)
    }
}

/// An estimate of Θ₀ (or of the inverse correlation matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    pub theta: Matrix,
    pub provenance: Provenance,
    pub lambda_used: f64,
}

impl PrecisionEstimate {
    pub fn new(theta: Matrix, provenance: Provenance, lambda_used: f64) -> Self {
        Self {
            theta,
            provenance,
            lambda_used,
        }
    }

    /// A population precision matrix; must be symmetric positive definite.
    pub fn population(theta: Matrix) -> Result<Self> {
        linalg::ensure_symmetric(&theta, 1e-12)?;
        linalg::cholesky(&theta)?;
        Ok(Self::new(theta, Provenance::Population, 0.0))
    }

    pub fn p(&self) -> usize {
        self.theta.nrows()
    }

    /// Σ₀ = Θ₀⁻¹ as a population covariance.
    pub fn implied_covariance(&self) -> Result<CovarianceEstimate> {
        let sigma = linalg::spd_inverse(&self.theta)?;
        CovarianceEstimate::from_sigma(sigma, 0, true)
    }
}

/// Off-diagonal support of a matrix as a set of ordered index pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
    degree: Vec<usize>,
}

impl SparsityPattern {
    pub fn from_edges(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        let mut degree = vec![0; p];
        for (i, j) in edges {
            if i >= p || j >= p {
                return Err(Error::InvalidInput(format!("edge ({i},{j}) out of range for p={p}")));
            }
            if i != j && set.insert((i, j)) {
                degree[i] += 1;
            }
        }
        Ok(Self {
            p,
            edges: set,
            degree,
        })
    }

    pub fn empty(p: usize) -> Self {
        Self {
            p,
            edges: BTreeSet::new(),
            degree: vec![0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// Number of selected partners of each node (dⱼ).
    pub fn per_node_degree(&self) -> &[usize] {
        &self.degree
    }

    pub fn max_degree(&self) -> usize {
        self.degree.iter().copied().max().unwrap_or(0)
    }

    /// Number of ordered pairs in the pattern (s).
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(i, j)| self.edges.contains(&(j, i)))
    }

    /// Support plus diagonal, as a boolean mask.
    pub fn active_mask_with_diagonal(&self) -> Vec<Vec<bool>> {
        let mut mask = vec![vec![false; self.p]; self.p];
        for (i, row) in mask.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(i, j) in &self.edges {
            mask[i][j] = true;
        }
        mask
    }
}

/// Edges {(i, j) : i ≠ j, |θᵢⱼ| > tol}.
pub fn pattern_from_matrix(theta: &Matrix, tol: f64) -> Result<SparsityPattern> {
    if !theta.is_square() {
        return Err(Error::dims(
            "square matrix",
            format!("{}x{}", theta.nrows(), theta.ncols()),
        ));
    }
    let p = theta.nrows();
    let edges = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && theta[(i, j)].abs() > tol);
    SparsityPattern::from_edges(p, edges)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// max(1/λ_min, λ_max); infinite when λ_min ≤ 0.
    pub l_empirical: f64,
}

impl Spectrum {
    pub fn is_positive_definite(&self) -> bool {
        self.lambda_min > 0.0
    }
}

pub fn spectrum_diagnostic(m: &Matrix) -> Result<Spectrum> {
    linalg::ensure_symmetric(m, 1e-10)?;
    let (lambda_min, lambda_max) = linalg::eigen_extremes(m);
    let l_empirical = if lambda_min > 0.0 {
        (1.0 / lambda_min).max(lambda_max)
    } else {
        f64::INFINITY
    };
    Ok(Spectrum {
        lambda_min,
        lambda_max,
        l_empirical,
    })
}
