//! Python bindings. Matrices are passed as lists of rows.

use dpx_core::linalg::{self, DenseMatrix, SymMatrix};
use dpx_core::optimal::{self, IpmConfig};
use dpx_core::precondition::{self, DiagScaling};
use dpx_core::randomlab::{self, CovKind, CovSpec};
use dpx_core::solvers::{self, BenchConfig, Method, PrecondStrategy, StrategyKind};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(dpx, DpxError, PyException);

fn err(e: dpx_core::Error) -> PyErr {
    DpxError::new_err(format!("{}: {e}", e.variant()))
}

fn sym(rows: Vec<Vec<f64>>) -> PyResult<SymMatrix> {
    SymMatrix::from_rows(&rows).map_err(err)
}

fn dense(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(err)
}

fn scaling(d: Vec<f64>) -> PyResult<DiagScaling> {
    DiagScaling::new(d).map_err(err)
}

fn ipm_config(beta: f64, eps: f64, max_outer: usize) -> IpmConfig {
    IpmConfig { beta, eps, max_outer, ..IpmConfig::default() }
}

fn parse<T: std::str::FromStr<Err = dpx_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyclass(name = "OptResult", frozen)]
struct PyOptResult(optimal::OptResult);

#[pymethods]
impl PyOptResult {
    #[getter]
    fn d_opt(&self) -> Vec<f64> {
        self.0.d_opt.as_slice().to_vec()
    }

    #[getter]
    fn kappa_before(&self) -> f64 {
        self.0.kappa_before
    }

    #[getter]
    fn kappa_achieved(&self) -> f64 {
        self.0.kappa_achieved
    }

    #[getter]
    fn kappa_certified(&self) -> f64 {
        self.0.kappa_certified
    }

    #[getter]
    fn outer_iterations(&self) -> usize {
        self.0.outer_iterations
    }

    #[getter]
    fn trace(&self) -> Vec<(f64, f64)> {
        self.0.trace.clone()
    }

    fn to_json(&self) -> String {
        self.0.to_json().to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "OptResult(kappa_before={}, kappa_achieved={}, outer_iterations={})",
            self.0.kappa_before, self.0.kappa_achieved, self.0.outer_iterations
        )
    }
}

/// Spectral condition number of a symmetric positive definite matrix:
/// `(kappa, lambda_min, lambda_max)`.
#[pyfunction]
fn cond(m: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
    let r = linalg::cond_2(&sym(m)?).map_err(err)?;
    Ok((r.kappa, r.lambda_min, r.lambda_max))
}

#[pyfunction]
fn cond_rect(x: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(linalg::cond_rect(&dense(x)?).map_err(err)?.kappa)
}

#[pyfunction]
fn cond_inf(m: Vec<Vec<f64>>) -> PyResult<f64> {
    linalg::cond_inf(&dense(m)?).map_err(err)
}

#[pyfunction]
fn jacobi_precond(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(precondition::jacobi_precond(&sym(m)?).map_err(err)?.into_vec())
}

/// `D^{-1/2} M D^{-1/2}`
#[pyfunction]
fn scale_sym(m: Vec<Vec<f64>>, d: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(precondition::scale_sym(&sym(m)?, &scaling(d)?).map_err(err)?.to_rows())
}

/// `X D^{-1/2}`
#[pyfunction]
fn apply_scaling(x: Vec<Vec<f64>>, d: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(precondition::apply_scaling(&dense(x)?, &scaling(d)?).map_err(err)?.to_rows())
}

#[pyfunction]
#[pyo3(signature = (m, beta = 0.05, eps = 1e-3, max_outer = 10_000))]
fn ipm_optimize(py: Python<'_>, m: Vec<Vec<f64>>, beta: f64, eps: f64, max_outer: usize) -> PyResult<PyOptResult> {
    let m = sym(m)?;
    let cfg = ipm_config(beta, eps, max_outer);
    py.detach(|| optimal::ipm_optimize(&m, &cfg)).map(PyOptResult).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (m, eps = 1e-3))]
fn bisect_optimize(py: Python<'_>, m: Vec<Vec<f64>>, eps: f64) -> PyResult<PyOptResult> {
    let m = sym(m)?;
    let cfg = IpmConfig { eps, ..IpmConfig::default() };
    py.detach(|| optimal::bisect_optimize(&m, eps, &cfg)).map(PyOptResult).map_err(err)
}

/// Covariance generator. `kind` is one of `spd_random`, `dominant`,
/// `identity`, `table2_like`.
#[pyfunction]
#[pyo3(signature = (kind, p, target_cond = 100.0, alpha = 2.0, seed = 0))]
fn gen_cov(kind: &str, p: usize, target_cond: f64, alpha: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let spec = match kind {
        "spd_random" => CovSpec::spd_random(p, target_cond, seed),
        "dominant" => CovSpec::dominant(p, target_cond, alpha, seed),
        "identity" => CovSpec::identity(p),
        "table2_like" => CovSpec::table2_like(p, seed),
        other => return Err(DpxError::new_err(format!("InvalidSpec: unknown covariance kind '{other}'"))),
    };
    Ok(randomlab::gen_cov(&spec).map_err(err)?.to_rows())
}

/// `n` Gaussian rows with zero mean and covariance `sigma`.
#[pyfunction]
#[pyo3(signature = (n, sigma, seed = 0))]
fn sample_rows(n: usize, sigma: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let sigma = sym(sigma)?;
    let mu = vec![0.0; sigma.dim()];
    Ok(randomlab::sample_rows(n, &sigma, &mu, seed).map_err(err)?.to_rows())
}

/// List of `(n, median_gap, q90_gap)`.
#[pyfunction]
#[pyo3(signature = (sigma, ns, trials = 50, seed = 0))]
fn concentration_sweep(
    py: Python<'_>,
    sigma: Vec<Vec<f64>>,
    ns: Vec<usize>,
    trials: usize,
    seed: u64,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let sigma = sym(sigma)?;
    let rows = py
        .detach(|| randomlab::concentration_sweep(&sigma, &ns, trials, seed))
        .map_err(err)?;
    Ok(rows.into_iter().map(|r| (r.n, r.median_gap, r.q90_gap)).collect())
}

/// Solves `A x = b`; returns `(x, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (a, b, method = "cg", tol = 1e-10, max_iter = 100_000, seed = 0))]
fn iterative_solve(
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    method: &str,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, usize, bool)> {
    let method: Method = parse(method)?;
    let (x, trace) = solvers::iterative_solve(&dense(a)?, &b, method, tol, max_iter, seed).map_err(err)?;
    Ok((x, trace.iterations, trace.converged))
}

/// Preconditioned gradient descent for least squares. `strategy` is one of
/// `none`, `fixed`, `optimal`, `batchnorm`, `adaptive`.
#[pyfunction]
#[pyo3(signature = (x, y, strategy = "none", tol = 0.01, max_iter = 200_000))]
fn gd_least_squares<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    strategy: &str,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let kind: StrategyKind = parse(strategy)?;
    let x = dense(x)?;
    let fit = py
        .detach(|| solvers::gd_least_squares(&x, &y, PrecondStrategy::new(kind), tol, max_iter, &IpmConfig::default()))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("theta", fit.theta)?;
    out.set_item("iterations", fit.trace.iterations)?;
    out.set_item("converged", fit.trace.converged)?;
    out.set_item("kappa_effective", fit.kappa_effective)?;
    out.set_item("objective_history", fit.objective_history)?;
    Ok(out)
}

/// Least-squares benchmark; returns the CSV table as a string.
#[pyfunction]
#[pyo3(signature = (n = 1000, p = 20, target_cond = 300.0, seeds = 5, strategies = vec!["none".to_string(), "optimal".to_string()], seed = 0), name = "bench")]
fn run_bench(
    py: Python<'_>,
    n: usize,
    p: usize,
    target_cond: f64,
    seeds: usize,
    strategies: Vec<String>,
    seed: u64,
) -> PyResult<String> {
    let kinds = strategies.iter().map(|s| parse::<StrategyKind>(s)).collect::<PyResult<Vec<_>>>()?;
    let cfg = BenchConfig {
        n,
        p,
        target_cond,
        seeds,
        base_seed: seed,
        cov_kind: CovKind::DominantCorrWithScales,
        ..BenchConfig::default()
    };
    let rows = py.detach(|| solvers::bench(&cfg, &kinds)).map_err(err)?;
    Ok(solvers::bench_csv(&rows))
}

#[pymodule]
fn dpx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DpxError", m.py().get_type::<DpxError>())?;
    m.add_class::<PyOptResult>()?;
    m.add_function(wrap_pyfunction!(cond, m)?)?;
    m.add_function(wrap_pyfunction!(cond_rect, m)?)?;
    m.add_function(wrap_pyfunction!(cond_inf, m)?)?;
    m.add_function(wrap_pyfunction!(jacobi_precond, m)?)?;
    m.add_function(wrap_pyfunction!(scale_sym, m)?)?;
    m.add_function(wrap_pyfunction!(apply_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(ipm_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(bisect_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(gen_cov, m)?)?;
    m.add_function(wrap_pyfunction!(sample_rows, m)?)?;
    m.add_function(wrap_pyfunction!(concentration_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(iterative_solve, m)?)?;
    m.add_function(wrap_pyfunction!(gd_least_squares, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
