//! The `dpx` command line.
//!
//! Scalings in every output follow the library convention: `d` acts as
//! `D^{-1/2}`, so the preconditioned matrix is `D^{-1/2} M D^{-1/2}`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::{read_csv_column, read_csv_labels, read_matrix, write_atomic, write_matrix};
use crate::linalg::{cond_2, cond_rect, DenseMatrix, SymMatrix};
use crate::optimal::{bisect_optimize, ipm_optimize, IpmConfig};
use crate::precondition::{scale_sym, jacobi_precond};
use crate::randomlab::{concentration_sweep, gen_cov, sample_rows, sweep_csv, CovKind, CovSpec};
use crate::solvers::{
    bench, bench_csv, gd_least_squares, iterative_solve, multinomial_logistic_gd, sgd_least_squares,
    BenchConfig, Method, PrecondStrategy, StrategyKind,
};

#[derive(Debug, Parser)]
#[command(name = "dpx", version, about = "Diagonal preconditioning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a covariance matrix (or rows sampled from it).
    Gen(GenArgs),
    /// Condition number of a matrix file.
    Cond(CondArgs),
    /// Compute a diagonal preconditioner.
    Precond(PrecondArgs),
    /// Run an iterative solver or optimizer.
    Solve(SolveArgs),
    /// Gradient-descent benchmark across preconditioning strategies.
    Bench(BenchArgs),
    /// Monte-Carlo sweep of the column-normalization gap.
    Concentration(ConcentrationArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovKindArg {
    SpdRandom,
    Dominant,
    Identity,
    Table2Like,
}

impl From<CovKindArg> for CovKind {
    fn from(k: CovKindArg) -> Self {
        match k {
            CovKindArg::SpdRandom => CovKind::SpdRandom,
            CovKindArg::Dominant => CovKind::DominantCorrWithScales,
            CovKindArg::Identity => CovKind::Identity,
            CovKindArg::Table2Like => CovKind::Table2Like,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "spd-random")]
    pub kind: CovKindArg,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 100.0)]
    pub target_cond: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Write this many Gaussian rows drawn from the covariance instead.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CondArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondMethod {
    OptimalIpm,
    OptimalBisect,
    Jacobi,
}

#[derive(Debug, Args, Serialize)]
pub struct PrecondArgs {
    #[arg(long, value_enum, default_value = "optimal-ipm")]
    pub method: PrecondMethod,
    /// Square SPD matrix, or a tall design matrix `X` (uses `X^T X`).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_outer: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Jacobi,
    GaussSeidel,
    KaczmarzCyclic,
    KaczmarzRandom,
    SteepestDescent,
    Cg,
    Gd,
    Sgd,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    None,
    Fixed,
    Optimal,
    Batchnorm,
    Adaptive,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::None => StrategyKind::None,
            StrategyArg::Fixed => StrategyKind::FixedColstats,
            StrategyArg::Optimal => StrategyKind::Optimal,
            StrategyArg::Batchnorm => StrategyKind::Batchnorm,
            StrategyArg::Adaptive => StrategyKind::AdaptiveOptimal,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub method: SolveMethod,
    /// Coefficient matrix (linear methods) or design matrix (gd, sgd, logistic).
    #[arg(long)]
    pub input: PathBuf,
    /// CSV with a header row: right-hand side, regression targets or class labels.
    #[arg(long)]
    pub rhs: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub strategy: StrategyArg,
    /// Defaults: 1e-10 for linear methods, 0.01 for gd/sgd, 1e-3 for logistic.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.1)]
    pub batch_frac: f64,
    #[arg(long, default_value_t = 100)]
    pub refresh_every: usize,
    /// Number of classes for logistic (default: largest label + 1).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 300.0)]
    pub target_cond: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none,fixed,optimal,batchnorm")]
    pub strategies: Vec<StrategyArg>,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// First seed; cells use `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value = "dominant")]
    pub cov_kind: CovKindArg,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConcentrationArgs {
    /// Covariance matrix file; generated from `--p`/`--target-cond` when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 100.0)]
    pub target_cond: f64,
    #[arg(long, value_delimiter = ',', default_value = "2000,8000")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn to_json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s.into_bytes()
}

fn config_value<T: Serialize>(command: &str, args: &T) -> Value {
    json!({ "command": command, "args": args })
}

/// `out` with a `.json` extension, or `<out>.report.json` if it already has one.
pub fn report_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        let mut s = out.as_os_str().to_owned();
        s.push(".report.json");
        PathBuf::from(s)
    } else {
        out.with_extension("json")
    }
}

fn load_sym(path: &Path) -> Result<SymMatrix> {
    let m = read_matrix(path)?;
    if m.nrows() == m.ncols() {
        SymMatrix::new(m)
    } else {
        Ok(DenseMatrix::new(m)?.gram())
    }
}

fn ipm_config(beta: f64, eps: f64, max_outer: usize) -> IpmConfig {
    IpmConfig { beta, eps, max_outer, ..IpmConfig::default() }
}

fn run_gen(a: &GenArgs) -> Result<()> {
    let spec = CovSpec { p: a.p, kind: a.kind.into(), target_cond: a.target_cond, alpha: a.alpha, seed: a.seed };
    let sigma = gen_cov(&spec)?;
    let m: DMatrix<f64> = match a.sample {
        Some(n) => sample_rows(n, &sigma, &vec![0.0; a.p], a.seed)?.into_inner(),
        None => sigma.into_inner(),
    };
    write_matrix(&a.out, &m)?;
    let report = json!({ "config": config_value("gen", a), "spec": spec });
    write_atomic(&report_path(&a.out), &to_json_bytes(&report))
}

fn run_cond(a: &CondArgs) -> Result<()> {
    let m = read_matrix(&a.input)?;
    let rep = if m.nrows() == m.ncols() {
        cond_2(&SymMatrix::new(m.clone())?)?
    } else {
        cond_rect(&DenseMatrix::new(m.clone())?)?
    };
    let v = json!({
        "kappa": rep.kappa,
        "lambda_max": rep.lambda_max,
        "lambda_min": rep.lambda_min,
        "shape": [m.nrows(), m.ncols()],
        "config": config_value("cond", a),
    });
    let bytes = to_json_bytes(&v);
    if let Some(out) = &a.out {
        write_atomic(out, &bytes)?;
    }
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn run_precond(a: &PrecondArgs) -> Result<()> {
    let m = load_sym(&a.input)?;
    let cfg = ipm_config(a.beta, a.eps, a.max_outer);
    let mut v = match a.method {
        PrecondMethod::OptimalIpm => ipm_optimize(&m, &cfg)?.to_json(),
        PrecondMethod::OptimalBisect => bisect_optimize(&m, a.eps, &cfg)?.to_json(),
        PrecondMethod::Jacobi => {
            let d = jacobi_precond(&m)?;
            json!({
                "kappa_before": cond_2(&m)?.kappa,
                "kappa_after": cond_2(&scale_sym(&m, &d)?)?.kappa,
                "d": d,
            })
        }
    };
    v["config"] = config_value("precond", a);
    write_atomic(&a.out, &to_json_bytes(&v))
}

fn run_solve(a: &SolveArgs) -> Result<()> {
    let m = read_matrix(&a.input)?;
    let cfg = IpmConfig::default();
    let strategy = PrecondStrategy { kind: a.strategy.into(), refresh_every: a.refresh_every };
    let linear = |method: Method| -> Result<Value> {
        let b = read_csv_column(&a.rhs)?;
        let (x, trace) = iterative_solve(&DenseMatrix::new(m.clone())?, &b, method, a.tol.unwrap_or(1e-10), a.max_iter, a.seed)?;
        Ok(json!({ "x": x, "trace": trace }))
    };
    let mut v = match a.method {
        SolveMethod::Jacobi => linear(Method::Jacobi)?,
        SolveMethod::GaussSeidel => linear(Method::GaussSeidel)?,
        SolveMethod::KaczmarzCyclic => linear(Method::KaczmarzCyclic)?,
        SolveMethod::KaczmarzRandom => linear(Method::KaczmarzRandom)?,
        SolveMethod::SteepestDescent => linear(Method::SteepestDescent)?,
        SolveMethod::Cg => linear(Method::Cg)?,
        SolveMethod::Gd | SolveMethod::Sgd => {
            let y = read_csv_column(&a.rhs)?;
            let x = DenseMatrix::new(m)?;
            let tol = a.tol.unwrap_or(0.01);
            let fit = if a.method == SolveMethod::Gd {
                gd_least_squares(&x, &y, strategy, tol, a.max_iter, &cfg)?
            } else {
                sgd_least_squares(&x, &y, strategy, a.batch_frac, tol, a.max_iter, &cfg, a.seed)?
            };
            serde_json::to_value(&fit).expect("fit serializes")
        }
        SolveMethod::Logistic => {
            let labels = read_csv_labels(&a.rhs)?;
            let k = a.classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
            let x = DenseMatrix::new(m)?;
            let fit = multinomial_logistic_gd(&x, &labels, k, strategy, a.tol.unwrap_or(1e-3), a.max_iter, &cfg)?;
            let theta: Vec<Vec<f64>> = fit.theta.row_iter().map(|r| r.iter().copied().collect()).collect();
            json!({
                "theta": theta,
                "trace": fit.trace,
                "log_gap": fit.log_gap,
                "accuracy": fit.accuracy,
                "kappa_effective": fit.kappa_effective,
            })
        }
    };
    v["config"] = config_value("solve", a);
    write_atomic(&a.out, &to_json_bytes(&v))
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        n: a.n,
        p: a.p,
        target_cond: a.target_cond,
        seeds: a.seeds,
        base_seed: a.seed,
        tol: a.tol,
        max_iter: a.max_iter,
        cov_kind: a.cov_kind.into(),
        alpha: a.alpha,
        ..BenchConfig::default()
    };
    let strategies: Vec<StrategyKind> = a.strategies.iter().map(|&s| s.into()).collect();
    let rows = bench(&cfg, &strategies)?;
    write_atomic(&a.out, bench_csv(&rows).as_bytes())?;
    let report = json!({ "config": config_value("bench", a), "bench": cfg, "rows": rows.len() });
    write_atomic(&report_path(&a.out), &to_json_bytes(&report))
}

fn run_concentration(a: &ConcentrationArgs) -> Result<()> {
    let sigma = match &a.input {
        Some(path) => SymMatrix::new(read_matrix(path)?)?,
        None => gen_cov(&CovSpec::spd_random(a.p, a.target_cond, a.seed))?,
    };
    let rows = concentration_sweep(&sigma, &a.ns, a.trials, a.seed)?;
    write_atomic(&a.out, sweep_csv(&rows).as_bytes())?;
    let report = json!({ "config": config_value("concentration", a), "p": sigma.dim(), "rows": rows });
    write_atomic(&report_path(&a.out), &to_json_bytes(&report))
}

pub fn run(cli: &Cli) -> Result<()> {
    log::debug!("{cli:?}");
    match &cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Cond(a) => run_cond(a),
        Command::Precond(a) => run_precond(a),
        Command::Solve(a) => run_solve(a),
        Command::Bench(a) => run_bench(a),
        Command::Concentration(a) => run_concentration(a),
    }
}

/// Exit status for a finished run: 0 on success, 2 for I/O and parse
/// failures, 1 for every other error.
pub fn exit_code(res: &Result<()>) -> i32 {
    match res {
        Ok(()) => 0,
        Err(e) if e.is_io() => 2,
        Err(_) => 1,
    }
}

pub fn describe(e: &Error) -> String {
    format!("error: {}: {e}", e.variant())
}
