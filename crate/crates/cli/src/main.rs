// SPDX-License-Identifier: Apache-2.0
//! `precis`: precision-matrix estimation, de-biasing, confidence intervals,
//! DAG edge inference and coverage simulations from the command line.
//!
//! Node indices in files and flags are 1-based. Exit status is 0 on success,
//! 1 for invalid input and 2 for numerical failure; nothing is written on
//! failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use precis::dag::{self, DagOptions, SearchMode, EXHAUSTIVE_ORDERING_LIMIT};
use precis::glasso::{self, GlassoConfig, GlassoVariant};
use precis::inference::{self, DebiasedEstimate};
use precis::io::{self, Precision};
use precis::model::{sample_covariance, CovarianceEstimate, DataMatrix, PrecisionEstimate};
use precis::nodewise::{self, NodewiseMethod};
use precis::simbench::{self, ExperimentConfig};
use precis::{Error, Result};

#[derive(Parser)]
#[command(name = "precis", version, about = "Sparse precision matrices with confidence intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the regularized precision matrix estimate.
    Estimate(EstimateArgs),
    /// Write the de-biased estimate T̂ = Θ̂ + Θ̂ᵀ − Θ̂ᵀΣ̂Θ̂.
    Debias(EstimateArgs),
    /// Write entrywise confidence intervals in long form.
    Ci {
        #[command(flatten)]
        est: EstimateArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Fit an equal-variance Gaussian DAG and write edge-weight intervals.
    Dag(DagArgs),
    /// Run a coverage experiment from a config file.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Glasso,
    #[value(name = "glasso-weigh")]
    GlassoWeigh,
    #[value(name = "glasso-norm")]
    GlassoNorm,
    #[value(name = "node-sqrt")]
    NodeSqrt,
    #[value(name = "node-sqrt-tau")]
    NodeSqrtTau,
    Node,
    Mle,
}

#[derive(Args)]
struct Output {
    #[arg(long, short)]
    output: PathBuf,
    /// Fixed decimals instead of 17 significant digits.
    #[arg(long)]
    digits: Option<usize>,
}

impl Output {
    fn precision(&self) -> Precision {
        self.digits.map_or(Precision::RoundTrip, Precision::Decimals)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "node-sqrt")]
    method: MethodArg,
    /// Defaults to √(log p/n).
    #[arg(long)]
    lambda: Option<f64>,
    /// Subtract column means before forming Σ̂.
    #[arg(long)]
    center: bool,
    #[command(flatten)]
    out: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Exhaustive up to 9 nodes, greedy beyond.
    Auto,
    Exhaustive,
    Greedy,
}

#[derive(Args)]
struct DagArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Ordering-score penalty; defaults to the library default.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    /// Comma-separated 1-based ordering, e.g. "1,3,2".
    #[arg(long)]
    known_ordering: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    center: bool,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON or key = value file.
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    out: Output,
}

fn load(input: &Path, center: bool) -> Result<(DataMatrix, CovarianceEstimate)> {
    let data = io::read_data_file(input)?;
    let data = if center { data.centered() } else { data };
    let cov = sample_covariance(&data, false)?;
    Ok((data, cov))
}

fn estimate(args: &EstimateArgs) -> Result<(PrecisionEstimate, CovarianceEstimate)> {
    let (data, cov) = load(&args.input, args.center)?;
    let lambda = args.lambda.unwrap_or_else(|| nodewise::universal_lambda(data.p(), data.n()));
    let glasso_fit = |variant| -> Result<PrecisionEstimate> {
        Ok(glasso::solve_graphical_lasso(&cov, &GlassoConfig::new(lambda, variant))?.estimate)
    };
    let nodewise_fit = |m: NodewiseMethod| -> Result<PrecisionEstimate> {
        Ok(nodewise::estimate_nodewise(&cov, &m.config(lambda))?.to_precision())
    };
    let est = match args.method {
        MethodArg::Glasso => glasso_fit(GlassoVariant::Plain)?,
        MethodArg::GlassoWeigh => glasso_fit(GlassoVariant::Weighted)?,
        // reported on the covariance scale
        MethodArg::GlassoNorm => glasso::weighted_from_normalized(&glasso_fit(GlassoVariant::Normalized)?, &cov)?,
        MethodArg::NodeSqrt => nodewise_fit(NodewiseMethod::NodeSqrt)?,
        MethodArg::NodeSqrtTau => nodewise_fit(NodewiseMethod::NodeSqrtTau)?,
        MethodArg::Node => nodewise_fit(NodewiseMethod::Node)?,
        MethodArg::Mle => simbench::mle_estimator(&cov)?,
    };
    Ok((est, cov))
}

fn debiased(args: &EstimateArgs) -> Result<DebiasedEstimate> {
    let (est, cov) = estimate(args)?;
    match args.method {
        MethodArg::Mle => DebiasedEstimate::without_correction(&est, cov.n),
        _ => DebiasedEstimate::new(&est, &cov, false),
    }
}

fn matrix_text(m: &precis::linalg::Matrix, precision: Precision) -> Result<String> {
    let mut buf = Vec::new();
    io::write_matrix(&mut buf, m, precision)?;
    Ok(String::from_utf8(buf).expect("formatted numbers are ASCII"))
}

fn ci_text(args: &EstimateArgs, alpha: f64) -> Result<String> {
    inference::check_alpha(alpha)?;
    let deb = debiased(args)?;
    let grid = inference::confidence_intervals(&deb, alpha)?;
    let f = |v: f64| args.out.precision().format(v);
    let mut s = String::from("i,j,estimate,lower,upper,sigma_hat\n");
    for i in 0..deb.p() {
        for j in 0..deb.p() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                i + 1,
                j + 1,
                f(deb.t_hat[(i, j)]),
                f(grid.lower[(i, j)]),
                f(grid.upper[(i, j)]),
                f(deb.sigma_hat[(i, j)])
            );
        }
    }
    Ok(s)
}

fn parse_ordering(text: &str, p: usize) -> Result<Vec<usize>> {
    let bad = || Error::InvalidInput(format!("--known-ordering must be a permutation of 1..={p}"));
    let pi = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok().filter(|&k| (1..=p).contains(&k)).map(|k| k - 1))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(bad)?;
    let mut seen = vec![false; p];
    for &k in &pi {
        if std::mem::replace(&mut seen[k], true) {
            return Err(bad());
        }
    }
    if pi.len() != p {
        return Err(bad());
    }
    Ok(pi)
}

fn dag_text(args: &DagArgs) -> Result<String> {
    inference::check_alpha(args.alpha)?;
    let data = io::read_data_file(&args.input)?;
    let data = if args.center { data.centered() } else { data };
    let mut opts = DagOptions::new(data.p(), data.n());
    if let Some(l) = args.lambda {
        opts.lambda = l;
    }
    opts.mode = match args.mode {
        ModeArg::Exhaustive => SearchMode::Exhaustive,
        ModeArg::Greedy => SearchMode::Greedy { seed: args.seed },
        ModeArg::Auto if data.p() <= EXHAUSTIVE_ORDERING_LIMIT => SearchMode::Exhaustive,
        ModeArg::Auto => SearchMode::Greedy { seed: args.seed },
    };
    if let Some(text) = &args.known_ordering {
        opts.known_ordering = Some(parse_ordering(text, data.p())?);
    }
    let fit = dag::fit_dag(&data, &opts)?;
    let f = |v: f64| args.out.precision().format(v);
    let mut s = String::from("k,j,beta_hat,b_debiased,lower,upper\n");
    for e in fit.intervals(args.alpha)? {
        let _ = writeln!(s, "{},{},{},{},{},{}", e.k + 1, e.j + 1, f(e.beta_hat), f(e.b_debiased), f(e.lower), f(e.upper));
    }
    Ok(s)
}

fn simulate_text(args: &SimulateArgs) -> Result<String> {
    let cfg = ExperimentConfig::parse(&std::fs::read_to_string(&args.config)?)?;
    let table = simbench::run_coverage_experiment(&cfg)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf, args.out.precision())?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

fn run(cli: &Cli) -> Result<(String, &Path)> {
    Ok(match &cli.command {
        Command::Estimate(a) => (matrix_text(&estimate(a)?.0.theta, a.out.precision())?, &a.out.output),
        Command::Debias(a) => (matrix_text(&debiased(a)?.t_hat, a.out.precision())?, &a.out.output),
        Command::Ci { est, alpha } => (ci_text(est, *alpha)?, &est.out.output),
        Command::Dag(a) => (dag_text(a)?, &a.out.output),
        Command::Simulate(a) => (simulate_text(a)?, &a.out.output),
    })
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("PRECIS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("PRECIS_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = run(&cli).and_then(|(text, path)| Ok(std::fs::write(path, text)?));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
