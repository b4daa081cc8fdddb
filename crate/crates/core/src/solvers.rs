//! Iterative linear solvers and preconditioned first-order methods for least
//! squares and multinomial logistic regression.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cond_2, cond_rect, DenseMatrix, SymMatrix};
use crate::optimal::{ipm_optimize, IpmConfig};
use crate::precondition::{apply_scaling, col_stats_precond, scale_sym, ColStat, DiagScaling};
use crate::randomlab::{gen_cov, rng_from_seed, sample_rows, CovKind, CovSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveTrace {
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<f64>,
    pub final_rel_error: f64,
}

impl SolveTrace {
    fn new() -> Self {
        SolveTrace { iterations: 0, converged: false, residual_history: Vec::new(), final_rel_error: f64::NAN }
    }

    fn push(&mut self, v: f64) {
        self.iterations += 1;
        self.residual_history.push(v);
        self.final_rel_error = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Jacobi,
    GaussSeidel,
    KaczmarzCyclic,
    KaczmarzRandom,
    SteepestDescent,
    Cg,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Jacobi => "jacobi",
            Method::GaussSeidel => "gauss_seidel",
            Method::KaczmarzCyclic => "kaczmarz_cyclic",
            Method::KaczmarzRandom => "kaczmarz_random",
            Method::SteepestDescent => "steepest_descent",
            Method::Cg => "cg",
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
        Ok(match s.replace('-', "_").as_str() {
            "jacobi" => Method::Jacobi,
            "gauss_seidel" => Method::GaussSeidel,
            "kaczmarz_cyclic" => Method::KaczmarzCyclic,
            "kaczmarz_random" => Method::KaczmarzRandom,
            "steepest_descent" => Method::SteepestDescent,
            "cg" => Method::Cg,
            _ => return Err(Error::InvalidSpec(format!("unknown method '{s}'"))),
        })
    }
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= 1e-12 * (1.0 + a[(i, j)].abs())))
}

fn is_spd(a: &DMatrix<f64>) -> bool {
    is_symmetric(a) && a.clone().cholesky().is_some()
}

fn strictly_diag_dominant(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).all(|i| {
        let off: f64 = (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        a[(i, i)].abs() > off
    })
}

/// Solves `A x = b` from `x = 0`. One iteration is a full sweep for the
/// Jacobi, Gauss-Seidel and Kaczmarz methods (`m` row projections for
/// Kaczmarz). Converged when `||Ax - b|| / ||b|| <= tol`.
pub fn iterative_solve<A: AsRef<DMatrix<f64>>>(
    a: &A,
    b: &[f64],
    method: Method,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(Vec<f64>, SolveTrace)> {
    let a = a.as_ref();
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidMatrix("iterative_solve needs a square matrix".into()));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() });
    }
    match method {
        Method::Jacobi | Method::GaussSeidel => {
            if !(is_spd(a) || strictly_diag_dominant(a)) {
                return Err(Error::InvalidMethodForMatrix(format!(
                    "{method} needs an SPD or strictly diagonally dominant matrix"
                )));
            }
        }
        Method::SteepestDescent | Method::Cg => {
            if !is_spd(a) {
                return Err(Error::InvalidMethodForMatrix(format!("{method} needs an SPD matrix")));
            }
        }
        Method::KaczmarzCyclic | Method::KaczmarzRandom => {
            if a.row_iter().any(|r| r.norm_squared() == 0.0) {
                return Err(Error::InvalidMethodForMatrix("Kaczmarz needs nonzero rows".into()));
            }
        }
    }
    let b = DVector::from_column_slice(b);
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    let mut trace = SolveTrace::new();
    if b_norm == 0.0 {
        trace.converged = true;
        trace.final_rel_error = 0.0;
        return Ok((x.as_slice().to_vec(), trace));
    }
    let rel_res = |x: &DVector<f64>| (a * x - &b).norm() / b_norm;
    let row_norms: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let mut rng = rng_from_seed(seed);
    let weights = WeightedIndex::new(&row_norms)
        .map_err(|e| Error::InvalidMethodForMatrix(format!("row weights: {e}")))?;
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();

    for _ in 0..max_iter {
        match method {
            Method::Jacobi => {
                let ax = a * &x;
                for i in 0..n {
                    x[i] += (b[i] - ax[i]) / a[(i, i)];
                }
            }
            Method::GaussSeidel => {
                for i in 0..n {
                    let s: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)] * x[j]).sum();
                    x[i] = (b[i] - s) / a[(i, i)];
                }
            }
            Method::KaczmarzCyclic | Method::KaczmarzRandom => {
                for k in 0..n {
                    let i = if method == Method::KaczmarzCyclic { k } else { weights.sample(&mut rng) };
                    let row = a.row(i);
                    let c = (b[i] - row.dot(&x.transpose())) / row_norms[i];
                    for j in 0..n {
                        x[j] += c * row[j];
                    }
                }
            }
            Method::SteepestDescent => {
                let r = &b - a * &x;
                let ar = a * &r;
                let denom = r.dot(&ar);
                if denom > 0.0 {
                    x += r.norm_squared() / denom * r;
                }
            }
            Method::Cg => {
                if rr > 0.0 {
                    let ap = a * &p;
                    let alpha = rr / p.dot(&ap);
                    x.axpy(alpha, &p, 1.0);
                    r.axpy(-alpha, &ap, 1.0);
                    let rr_new = r.norm_squared();
                    p = &r + (rr_new / rr) * &p;
                    rr = rr_new;
                }
            }
        }
        let res = rel_res(&x);
        trace.push(res);
        if !res.is_finite() || res > 1e12 {
            return Err(Error::Diverged);
        }
        if res <= tol {
            trace.converged = true;
            break;
        }
    }
    if trace.iterations == 0 {
        trace.final_rel_error = 1.0;
    }
    Ok((x.as_slice().to_vec(), trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    None,
    /// Columns divided by their standard deviation.
    FixedColstats,
    /// Optimal diagonal scaling of `X^T X`, computed once.
    Optimal,
    /// Exact alternating minimization over `theta` and `D`.
    Batchnorm,
    /// Optimal scaling of the growing buffer of distinct rows seen so far.
    AdaptiveOptimal,
}

impl StrategyKind {
    /// Short name used in CSV output and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::FixedColstats => "fixed",
            StrategyKind::Optimal => "optimal",
            StrategyKind::Batchnorm => "batchnorm",
            StrategyKind::AdaptiveOptimal => "adaptive",
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().replace('-', "_").as_str() {
            "none" => StrategyKind::None,
            "fixed" | "fixed_colstats" => StrategyKind::FixedColstats,
            "optimal" => StrategyKind::Optimal,
            "batchnorm" => StrategyKind::Batchnorm,
            "adaptive" | "adaptive_optimal" => StrategyKind::AdaptiveOptimal,
            _ => return Err(Error::InvalidSpec(format!("unknown strategy '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrecondStrategy {
    pub kind: StrategyKind,
    pub refresh_every: usize,
}

impl PrecondStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        PrecondStrategy { kind, refresh_every: 100 }
    }

    pub fn adaptive(refresh_every: usize) -> Self {
        PrecondStrategy { kind: StrategyKind::AdaptiveOptimal, refresh_every }
    }
}

impl From<StrategyKind> for PrecondStrategy {
    fn from(kind: StrategyKind) -> Self {
        PrecondStrategy::new(kind)
    }
}

/// Output of the least-squares solvers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsFit {
    /// Coefficients in the original coordinates.
    pub theta: Vec<f64>,
    /// `residual_history` holds `||theta - theta_OLS|| / ||theta_OLS||`.
    pub trace: SolveTrace,
    /// Condition number of the effective design (median over iterations when
    /// the scaling changes).
    pub kappa_effective: f64,
    /// Batch-norm scaling entries clamped to stay positive.
    pub clamp_events: usize,
    /// Full-data objective `(1/n) ||X theta - y||^2` after each iteration.
    pub objective_history: Vec<f64>,
}

/// `(1/n) ||X theta - y||^2`
pub fn ls_objective(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    (x * theta - y).norm_squared() / x.nrows() as f64
}

/// Least-squares solution by Cholesky of the normal equations.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    let g = x.transpose() * x;
    let chol = g.cholesky().ok_or(Error::SingularMatrix)?;
    let theta = chol.solve(&(x.transpose() * y));
    if theta.iter().all(|v| v.is_finite()) {
        Ok(theta)
    } else {
        Err(Error::SingularMatrix)
    }
}

fn scale_columns(x: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

/// Column multipliers `d^{-1/2}` equivalent to [`apply_scaling`].
fn multipliers(d: &DiagScaling) -> Vec<f64> {
    d.as_slice().iter().map(|v| 1.0 / v.sqrt()).collect()
}

fn colstat_multipliers(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = col_stats_precond(&DenseMatrix::new(x.clone())?, ColStat::Variance)?;
    Ok(multipliers(&d))
}

/// Rescales an optimal `d` (any positive multiple is equally optimal) so the
/// scaled Gram matrix has largest eigenvalue 1.
fn unit_top(gram: &SymMatrix, d: DiagScaling) -> Result<DiagScaling> {
    let top = cond_2(&scale_sym(gram, &d)?)?.lambda_max;
    d.scaled(top)
}

fn optimal_multipliers(x: &DMatrix<f64>, cfg: &IpmConfig) -> Result<Vec<f64>> {
    let gram = SymMatrix::symmetrize(x.transpose() * x);
    let res = ipm_optimize(&gram, cfg)?;
    Ok(multipliers(&unit_top(&gram, res.d_opt)?))
}

fn rect_cond(x: &DMatrix<f64>, s: &[f64]) -> f64 {
    DenseMatrix::new(scale_columns(x, s))
        .and_then(|m| cond_rect(&m))
        .map(|c| c.kappa)
        .unwrap_or(f64::INFINITY)
}

fn median(values: &[f64]) -> f64 {
    crate::randomlab::quantile(values, 0.5)
}

/// Result of [`batchnorm_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchnormUpdate {
    pub theta: Vec<f64>,
    pub d: DiagScaling,
    /// Entries of the new scaling raised to `1e-12`.
    pub clamped: usize,
    /// False when `theta` came out zero and `d` was kept.
    pub updated: bool,
}

/// One round of alternating least squares on `(1/n) ||X diag(d) theta - y||^2`.
///
/// Here `d` multiplies the columns of `X` directly. The `theta` step solves
/// the normal equations of `X diag(d)`; the `D` step solves the least-squares
/// problem in `d` with design `X diag(theta)` and clamps entries at `1e-12`.
pub fn batchnorm_step(
    x: &DenseMatrix,
    y: &[f64],
    theta: &[f64],
    d: &DiagScaling,
) -> Result<BatchnormUpdate> {
    let p = x.cols();
    if theta.len() != p || d.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: theta.len().min(d.len()) });
    }
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), found: y.len() });
    }
    let y = DVector::from_column_slice(y);
    let xd = scale_columns(x.as_matrix(), d.as_slice());
    let theta_new = ols(&xd, &y)?;
    if theta_new.iter().all(|&v| v == 0.0) {
        return Ok(BatchnormUpdate {
            theta: theta_new.as_slice().to_vec(),
            d: d.clone(),
            clamped: 0,
            updated: false,
        });
    }
    let w = scale_columns(x.as_matrix(), theta_new.as_slice());
    let d_ls = w
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::NumericalBreakdown(e.to_string()))?;
    let mut clamped = 0;
    let d_new: Vec<f64> = d_ls
        .iter()
        .map(|&v| {
            if v >= 1e-12 {
                v
            } else {
                clamped += 1;
                1e-12
            }
        })
        .collect();
    Ok(BatchnormUpdate {
        theta: theta_new.as_slice().to_vec(),
        d: DiagScaling::new(d_new)?,
        clamped,
        updated: true,
    })
}

/// Distinct rows seen so far, compared bit for bit.
#[derive(Debug, Clone, Default)]
pub struct RowBuffer {
    rows: Vec<Vec<f64>>,
    seen: HashSet<Vec<u64>>,
}

impl RowBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds the rows not seen before; returns how many were new.
    pub fn extend(&mut self, batch: &DMatrix<f64>) -> usize {
        let mut added = 0;
        for row in batch.row_iter() {
            let v: Vec<f64> = row.iter().copied().collect();
            if self.seen.insert(v.iter().map(|x| x.to_bits()).collect()) {
                self.rows.push(v);
                added += 1;
            }
        }
        added
    }

    pub fn to_matrix(&self) -> Option<DenseMatrix> {
        DenseMatrix::from_rows(&self.rows).ok()
    }

    /// Optimal scaling of the buffer's Gram matrix, if it has full column rank,
    /// normalized so the scaled Gram matrix has largest eigenvalue 1.
    pub fn optimal_scaling(&self, cfg: &IpmConfig) -> Option<DiagScaling> {
        let m = self.to_matrix()?;
        if m.rows() < m.cols() {
            return None;
        }
        let gram = m.gram();
        cond_2(&gram).ok()?;
        let d = ipm_optimize(&gram, cfg).ok()?.d_opt;
        unit_top(&gram, d).ok()
    }
}

/// Appends the distinct new rows of `new_batch` to `buffer` and computes the
/// optimal scaling of the result when it has full column rank.
pub fn adaptive_optimal_update(
    buffer: Option<&DenseMatrix>,
    new_batch: &DenseMatrix,
    cfg: &IpmConfig,
) -> Result<(DenseMatrix, Option<DiagScaling>)> {
    let mut buf = RowBuffer::new();
    if let Some(b) = buffer {
        if b.cols() != new_batch.cols() {
            return Err(Error::DimensionMismatch { expected: b.cols(), found: new_batch.cols() });
        }
        buf.extend(b.as_matrix());
    }
    buf.extend(new_batch.as_matrix());
    let d = buf.optimal_scaling(cfg);
    let m = buf.to_matrix().expect("buffer holds the batch rows");
    Ok((m, d))
}

struct LsProblem {
    theta_ols: DVector<f64>,
    ols_norm: f64,
}

impl LsProblem {
    fn rel_error(&self, theta: &DVector<f64>) -> f64 {
        (theta - &self.theta_ols).norm() / self.ols_norm
    }
}

fn check_ls_inputs(x: &DenseMatrix, y: &[f64], tol: f64) -> Result<()> {
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), found: y.len() });
    }
    if x.rows() <= x.cols() {
        return Err(Error::InvalidSpec(format!("need n > p, got n = {}, p = {}", x.rows(), x.cols())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec("tol must be positive".into()));
    }
    Ok(())
}

/// Row subsets used at each iteration: everything for full-batch descent, a
/// sorted random subset otherwise.
enum Batches {
    Full,
    Random { size: usize, rng: Box<ChaCha8Rng> },
}

impl Batches {
    fn next(&mut self, n: usize) -> Option<Vec<usize>> {
        match self {
            Batches::Full => None,
            Batches::Random { size, rng } => {
                let mut idx = index::sample(rng.as_mut(), n, *size).into_vec();
                idx.sort_unstable();
                Some(idx)
            }
        }
    }
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn select_entries(y: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| y[rows[i]])
}

/// Armijo backtracking along the preconditioned direction `-diag(s^2) X^T r`.
/// Returns the accepted step, or `None` when the direction vanishes.
fn armijo_step(
    xb: &DMatrix<f64>,
    yb: &DVector<f64>,
    theta: &DVector<f64>,
    s: &[f64],
) -> Result<Option<DVector<f64>>> {
    let nb = xb.nrows() as f64;
    let r = xb * theta - yb;
    let f0 = r.norm_squared() / nb;
    let g = xb.transpose() * &r;
    let dir = DVector::from_fn(g.len(), |j, _| -s[j] * s[j] * g[j]);
    // directional derivative of f along dir
    let slope = 2.0 / nb * g.dot(&dir);
    if slope == 0.0 {
        return Ok(None);
    }
    let xdir = xb * &dir;
    let mut t = 1.0;
    while t >= 1e-16 {
        let f1 = (&r + t * &xdir).norm_squared() / nb;
        if f1 <= f0 + 1e-4 * t * slope {
            return Ok(Some(theta + t * dir));
        }
        t *= 0.5;
    }
    Err(Error::LineSearchStall)
}

fn ls_descent(
    x: &DenseMatrix,
    y: &[f64],
    strategy: PrecondStrategy,
    tol: f64,
    max_iter: usize,
    cfg: &IpmConfig,
    mut batches: Batches,
) -> Result<LsFit> {
    check_ls_inputs(x, y, tol)?;
    if strategy.refresh_every == 0 {
        return Err(Error::InvalidSpec("refresh_every must be at least 1".into()));
    }
    let xm = x.as_matrix();
    let (n, p) = (xm.nrows(), xm.ncols());
    let yv = DVector::from_column_slice(y);
    let theta_ols = ols(xm, &yv)?;
    let ols_norm = theta_ols.norm();
    if ols_norm == 0.0 {
        return Err(Error::InvalidSpec("least-squares solution is zero".into()));
    }
    let problem = LsProblem { theta_ols, ols_norm };

    let mut s: Vec<f64> = match strategy.kind {
        StrategyKind::None | StrategyKind::AdaptiveOptimal => vec![1.0; p],
        StrategyKind::FixedColstats | StrategyKind::Batchnorm => colstat_multipliers(xm)?,
        StrategyKind::Optimal => optimal_multipliers(xm, cfg)?,
    };
    let mut kappas = Vec::new();
    let mut buffer = RowBuffer::new();
    let mut buffer_len_at_refresh = usize::MAX;
    let mut bn_d = DiagScaling::new(s.clone())?;
    let mut clamp_events = 0;

    let mut theta = DVector::zeros(p);
    let mut trace = SolveTrace::new();
    let mut objective_history = Vec::new();
    for it in 0..max_iter {
        let rows = batches.next(n);
        let (xb, yb) = match &rows {
            Some(idx) => (select_rows(xm, idx), select_entries(&yv, idx)),
            None => (xm.clone(), yv.clone()),
        };
        match strategy.kind {
            StrategyKind::FixedColstats if rows.is_some() => s = colstat_multipliers(&xb)?,
            StrategyKind::AdaptiveOptimal => {
                buffer.extend(&xb);
                if it % strategy.refresh_every == 0 && buffer.len() != buffer_len_at_refresh {
                    buffer_len_at_refresh = buffer.len();
                    if let Some(d) = buffer.optimal_scaling(cfg) {
                        s = multipliers(&d);
                    }
                }
            }
            _ => {}
        }

        if strategy.kind == StrategyKind::Batchnorm {
            kappas.push(rect_cond(xm, bn_d.as_slice()));
            let current = DVector::from_fn(p, |j, _| theta[j] / bn_d.as_slice()[j]);
            let upd = batchnorm_step(&DenseMatrix::new(xb)?, yb.as_slice(), current.as_slice(), &bn_d)?;
            clamp_events += upd.clamped;
            theta = DVector::from_fn(p, |j, _| upd.theta[j] * bn_d.as_slice()[j]);
            bn_d = upd.d;
        } else {
            if matches!(strategy.kind, StrategyKind::AdaptiveOptimal)
                || (strategy.kind == StrategyKind::FixedColstats && rows.is_some())
            {
                kappas.push(rect_cond(xm, &s));
            }
            match armijo_step(&xb, &yb, &theta, &s)? {
                Some(next) => theta = next,
                None => {
                    let err = problem.rel_error(&theta);
                    objective_history.push(ls_objective(xm, &yv, &theta));
                    trace.push(err);
                    trace.converged = err <= tol;
                    break;
                }
            }
        }
        let err = problem.rel_error(&theta);
        if !err.is_finite() {
            return Err(Error::Diverged);
        }
        objective_history.push(ls_objective(xm, &yv, &theta));
        trace.push(err);
        log::trace!("ls it={it} rel_err={err:e}");
        if err <= tol {
            trace.converged = true;
            break;
        }
    }
    if trace.iterations == 0 {
        trace.final_rel_error = problem.rel_error(&theta);
    }
    let kappa_effective = if kappas.is_empty() { rect_cond(xm, &s) } else { median(&kappas) };
    Ok(LsFit { theta: theta.as_slice().to_vec(), trace, kappa_effective, clamp_events, objective_history })
}

/// Full-batch gradient descent on `(1/n) ||X theta - y||^2` from `theta = 0`
/// with Armijo backtracking (initial step 1, halving, `c1 = 1e-4`).
///
/// Steps move along `-diag(s)^2 X^T (X theta - y)` where `s` are the column
/// multipliers of the strategy's effective design `X diag(s)`; this is plain
/// gradient descent in the scaled coordinates. Converged once
/// `||theta - theta_OLS|| / ||theta_OLS|| <= tol`.
pub fn gd_least_squares(
    x: &DenseMatrix,
    y: &[f64],
    strategy: PrecondStrategy,
    tol: f64,
    max_iter: usize,
    cfg: &IpmConfig,
) -> Result<LsFit> {
    ls_descent(x, y, strategy, tol, max_iter, cfg, Batches::Full)
}

/// Minibatch version of [`gd_least_squares`]: each iteration draws
/// `ceil(batch_frac * n)` distinct rows and backtracks on the minibatch
/// objective. `batch_frac = 1` reproduces full-batch descent.
#[allow(clippy::too_many_arguments)]
pub fn sgd_least_squares(
    x: &DenseMatrix,
    y: &[f64],
    strategy: PrecondStrategy,
    batch_frac: f64,
    tol: f64,
    max_iter: usize,
    cfg: &IpmConfig,
    seed: u64,
) -> Result<LsFit> {
    if !(batch_frac > 0.0 && batch_frac <= 1.0) {
        return Err(Error::InvalidSpec(format!("batch_frac must be in (0,1], got {batch_frac}")));
    }
    let n = x.rows();
    let size = ((batch_frac * n as f64).ceil() as usize).clamp(1, n);
    let batches = if size == n {
        Batches::Full
    } else {
        Batches::Random { size, rng: Box::new(rng_from_seed(seed)) }
    };
    ls_descent(x, y, strategy, tol, max_iter, cfg, batches)
}

fn softmax_probs(x: &DMatrix<f64>, theta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = x * theta;
    for mut row in z.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

fn check_labels(x: &DMatrix<f64>, labels: &[usize], k: usize, theta: Option<&DMatrix<f64>>) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidSpec("need at least two classes".into()));
    }
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidSpec(format!("label {bad} outside [0, {k})")));
    }
    if let Some(t) = theta {
        if t.nrows() != x.ncols() || t.ncols() != k {
            return Err(Error::DimensionMismatch { expected: x.ncols() * k, found: t.len() });
        }
    }
    Ok(())
}

/// Cross-entropy `-(1/n) sum_i log p_{i, y_i}` of the softmax model with
/// parameters `theta` (`p x K`).
pub fn softmax_loss(x: &DenseMatrix, labels: &[usize], theta: &DMatrix<f64>) -> Result<f64> {
    let xm = x.as_matrix();
    check_labels(xm, labels, theta.ncols(), Some(theta))?;
    let z = xm * theta;
    let mut total = 0.0;
    for (i, row) in z.row_iter().enumerate() {
        let m = row.max();
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    Ok(total / xm.nrows() as f64)
}

/// Gradient `(1/n) X^T (P - Y)` of [`softmax_loss`], with `Y` the one-hot labels.
pub fn softmax_grad(x: &DenseMatrix, labels: &[usize], theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xm = x.as_matrix();
    check_labels(xm, labels, theta.ncols(), Some(theta))?;
    let mut pm = softmax_probs(xm, theta);
    for (i, &l) in labels.iter().enumerate() {
        pm[(i, l)] -= 1.0;
    }
    Ok(xm.transpose() * pm / xm.nrows() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// `p x K` coefficients in the original coordinates.
    pub theta: DMatrix<f64>,
    /// `residual_history` holds the gradient norm after each step.
    pub trace: SolveTrace,
    /// `log(f(theta_k) - f(theta*))` per iteration.
    pub log_gap: Vec<f64>,
    pub accuracy: f64,
    pub kappa_effective: f64,
}

fn logistic_descent(
    xs: &DenseMatrix,
    labels: &[usize],
    k: usize,
    grad_tol: f64,
    max_iter: usize,
    mut on_step: impl FnMut(f64),
) -> Result<(DMatrix<f64>, SolveTrace)> {
    let p = xs.cols();
    let mut theta = DMatrix::zeros(p, k);
    let mut f = softmax_loss(xs, labels, &theta)?;
    let mut trace = SolveTrace::new();
    for _ in 0..max_iter {
        let g = softmax_grad(xs, labels, &theta)?;
        let gn = g.norm();
        if gn < grad_tol {
            trace.converged = true;
            break;
        }
        let slope = -gn * gn;
        let mut t = 1.0;
        loop {
            if t < 1e-16 {
                return Err(Error::LineSearchStall);
            }
            let trial = &theta - t * &g;
            let ft = softmax_loss(xs, labels, &trial)?;
            if ft.is_nan() {
                return Err(Error::NumericalBreakdown("loss is NaN".into()));
            }
            if ft <= f + 1e-4 * t * slope {
                theta = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
        on_step(f);
        let gn = softmax_grad(xs, labels, &theta)?.norm();
        trace.push(gn);
        if gn < grad_tol {
            trace.converged = true;
            break;
        }
    }
    if trace.iterations == 0 {
        trace.final_rel_error = softmax_grad(xs, labels, &theta)?.norm();
    }
    Ok((theta, trace))
}

/// Gradient descent with Armijo backtracking on the multinomial logistic loss
/// of the scaled design, stopping when the gradient norm drops below
/// `grad_tol`. The reference optimum is obtained by running to `1e-8`.
pub fn multinomial_logistic_gd(
    x: &DenseMatrix,
    labels: &[usize],
    k: usize,
    strategy: PrecondStrategy,
    grad_tol: f64,
    max_iter: usize,
    cfg: &IpmConfig,
) -> Result<LogisticFit> {
    check_labels(x.as_matrix(), labels, k, None)?;
    let s = match strategy.kind {
        StrategyKind::None => vec![1.0; x.cols()],
        StrategyKind::FixedColstats => colstat_multipliers(x.as_matrix())?,
        StrategyKind::Optimal | StrategyKind::AdaptiveOptimal => optimal_multipliers(x.as_matrix(), cfg)?,
        StrategyKind::Batchnorm => {
            return Err(Error::InvalidSpec("batchnorm applies to least squares only".into()))
        }
    };
    let xs = DenseMatrix::new(scale_columns(x.as_matrix(), &s))?;
    let (theta_star, _) = logistic_descent(&xs, labels, k, 1e-8, max_iter.saturating_mul(20).max(10_000), |_| {})?;
    let f_star = softmax_loss(&xs, labels, &theta_star)?;
    let mut log_gap = Vec::new();
    let (theta_s, trace) = logistic_descent(&xs, labels, k, grad_tol, max_iter, |f| {
        log_gap.push((f - f_star).max(f64::MIN_POSITIVE).ln())
    })?;
    let probs = softmax_probs(xs.as_matrix(), &theta_s);
    let correct = probs
        .row_iter()
        .zip(labels)
        .filter(|(row, &l)| {
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == l
        })
        .count();
    let mut theta = theta_s;
    for (j, mut row) in theta.row_iter_mut().enumerate() {
        row *= s[j];
    }
    Ok(LogisticFit {
        theta,
        trace,
        log_gap,
        accuracy: correct as f64 / labels.len() as f64,
        kappa_effective: cond_rect(&xs).map(|c| c.kappa).unwrap_or(f64::INFINITY),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarLossKind {
    /// `f(z) = z^2 / 2`
    Quadratic,
    /// `f(z) = z^2 / 2 + a log(1 + e^z)`
    LogisticPlusQuadratic,
}

/// A scalar loss with `lambda_mod <= f'' <= l_mod`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarLossSpec {
    pub kind: ScalarLossKind,
    pub a: f64,
    pub lambda_mod: f64,
    pub l_mod: f64,
}

impl ScalarLossSpec {
    pub fn quadratic() -> Self {
        ScalarLossSpec { kind: ScalarLossKind::Quadratic, a: 0.0, lambda_mod: 1.0, l_mod: 1.0 }
    }

    pub fn logistic_plus_quadratic(a: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(Error::InvalidSpec(format!("logistic weight must be >= 0, got {a}")));
        }
        Ok(ScalarLossSpec {
            kind: ScalarLossKind::LogisticPlusQuadratic,
            a,
            lambda_mod: 1.0,
            l_mod: 1.0 + a / 4.0,
        })
    }

    /// `L / lambda`
    pub fn kappa0(&self) -> f64 {
        self.l_mod / self.lambda_mod
    }

    pub fn second_derivative(&self, z: f64) -> f64 {
        match self.kind {
            ScalarLossKind::Quadratic => 1.0,
            ScalarLossKind::LogisticPlusQuadratic => {
                let sig = 1.0 / (1.0 + (-z).exp());
                1.0 + self.a * sig * (1.0 - sig)
            }
        }
    }
}

/// `(1/n) sum_i f''(w^T x_i) x_i x_i^T`
pub fn glm_hessian(spec: &ScalarLossSpec, x: &DenseMatrix, w: &[f64]) -> Result<SymMatrix> {
    let xm = x.as_matrix();
    if w.len() != xm.ncols() {
        return Err(Error::DimensionMismatch { expected: xm.ncols(), found: w.len() });
    }
    let wv = DVector::from_column_slice(w);
    let z = xm * wv;
    let weights: Vec<f64> = z.iter().map(|&zi| spec.second_derivative(zi)).collect();
    let mut weighted = xm.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    Ok(SymMatrix::symmetrize(xm.transpose() * weighted / xm.nrows() as f64))
}

/// Compares `kappa(H(X D^{-1/2}, w))` with
/// `kappa0^2 * kappa(H(X, w)) * kappa(D^{-1/2} X^T X D^{-1/2}) / kappa(X^T X)`.
/// Returns `(lhs, rhs)`.
pub fn hessian_cond_check(
    spec: &ScalarLossSpec,
    x: &DenseMatrix,
    w: &[f64],
    d: &DiagScaling,
) -> Result<(f64, f64)> {
    let xs = apply_scaling(x, d)?;
    let k_plain = cond_2(&x.gram())?.kappa;
    let k_scaled = cond_2(&xs.gram())?.kappa;
    if k_scaled > k_plain {
        return Err(Error::HypothesisFailed { scaled: k_scaled, unscaled: k_plain });
    }
    let lhs = cond_2(&glm_hessian(spec, &xs, w)?)?.kappa;
    let h = cond_2(&glm_hessian(spec, x, w)?)?.kappa;
    let rhs = spec.kappa0().powi(2) * h * k_scaled / k_plain;
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub n: usize,
    pub p: usize,
    pub target_cond: f64,
    pub seeds: usize,
    pub base_seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub refresh_every: usize,
    /// Covariance generator; `alpha` is used by the dominant kind.
    pub cov_kind: CovKind,
    pub alpha: f64,
    pub ipm: IpmConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n: 1000,
            p: 20,
            target_cond: 300.0,
            seeds: 5,
            base_seed: 0,
            tol: 0.01,
            max_iter: 200_000,
            refresh_every: 100,
            cov_kind: CovKind::DominantCorrWithScales,
            alpha: 2.0,
            ipm: IpmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub strategy: String,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub kappa_effective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Regression problem for one bench seed: `Sigma` from [`gen_cov`], Gaussian
/// rows, `y = X theta* + noise` with standard normal `theta*` and noise.
pub fn bench_problem(cfg: &BenchConfig, seed: u64) -> Result<(DenseMatrix, Vec<f64>)> {
    let (n, p) = (cfg.n, cfg.p);
    let spec = CovSpec { p, kind: cfg.cov_kind, target_cond: cfg.target_cond, alpha: cfg.alpha, seed };
    let sigma = gen_cov(&spec)?;
    let x = sample_rows(n, &sigma, &vec![0.0; p], seed.wrapping_add(0x5EED))?;
    let mut rng = rng_from_seed(seed.wrapping_add(0xBEEF));
    let theta: DVector<f64> = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
    let noise: DVector<f64> = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let y = x.as_matrix() * theta + noise;
    Ok((x, y.as_slice().to_vec()))
}

/// Runs full-batch gradient descent for every (seed, strategy) cell. Cells run
/// in parallel; rows come back ordered by seed, then strategy.
pub fn bench(cfg: &BenchConfig, strategies: &[StrategyKind]) -> Result<Vec<BenchRow>> {
    if strategies.is_empty() || cfg.seeds == 0 {
        return Err(Error::InvalidSpec("bench needs at least one strategy and one seed".into()));
    }
    let cells: Vec<(u64, StrategyKind)> = (0..cfg.seeds as u64)
        .flat_map(|i| strategies.iter().map(move |&s| (cfg.base_seed.wrapping_add(i), s)))
        .collect();
    cells
        .par_iter()
        .map(|&(seed, kind)| {
            let (x, y) = bench_problem(cfg, seed)?;
            let strategy = PrecondStrategy { kind, refresh_every: cfg.refresh_every };
            let fit = gd_least_squares(&x, &y, strategy, cfg.tol, cfg.max_iter, &cfg.ipm)?;
            log::debug!("bench seed={seed} strategy={} iterations={}", kind.name(), fit.trace.iterations);
            Ok(BenchRow {
                strategy: kind.name().to_string(),
                n: cfg.n,
                p: cfg.p,
                seed,
                kappa_effective: fit.kappa_effective,
                iterations: fit.trace.iterations,
                converged: fit.trace.converged,
            })
        })
        .collect()
}

/// CSV with header `strategy,n,p,seed,kappa_effective,iterations,converged`.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("strategy,n,p,seed,kappa_effective,iterations,converged\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.16e},{},{}",
            r.strategy, r.n, r.p, r.seed, r.kappa_effective, r.iterations, r.converged
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dense(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix {
        DenseMatrix::new(DMatrix::from_row_slice(rows, cols, v)).unwrap()
    }

    #[test]
    fn jacobi_identity_one_iteration() {
        let a = DenseMatrix::new(DMatrix::<f64>::identity(3, 3)).unwrap();
        let (x, t) = iterative_solve(&a, &[1.0, -2.0, 3.0], Method::Jacobi, 1e-12, 10, 0).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
        assert_eq!(t.iterations, 1);
        assert!(t.converged);
    }

    #[test]
    fn all_methods_solve_small_spd() {
        let a = dense(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        for m in [
            Method::Jacobi,
            Method::GaussSeidel,
            Method::KaczmarzCyclic,
            Method::KaczmarzRandom,
            Method::SteepestDescent,
            Method::Cg,
        ] {
            let (x, t) = iterative_solve(&a, &[3.0, 3.0], m, 1e-10, 10_000, 1).unwrap();
            assert!(t.converged, "{m}");
            assert_eq!(t.residual_history.len(), t.iterations);
            assert_relative_eq!(x[0], 1.0, epsilon = 1e-9);
            assert_relative_eq!(x[1], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn kaczmarz_orthogonal_rows_one_sweep() {
        let a = dense(2, 2, &[3.0, 4.0, -4.0, 3.0]);
        let (_, t) = iterative_solve(&a, &[1.0, 2.0], Method::KaczmarzCyclic, 1e-12, 5, 0).unwrap();
        assert_eq!(t.iterations, 1);
    }

    #[test]
    fn method_preconditions() {
        let nonsym = dense(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            iterative_solve(&nonsym, &[1.0, 1.0], Method::Cg, 1e-8, 10, 0),
            Err(Error::InvalidMethodForMatrix(_))
        ));
        assert!(matches!(
            iterative_solve(&nonsym, &[1.0, 1.0], Method::Jacobi, 1e-8, 10, 0),
            Err(Error::InvalidMethodForMatrix(_))
        ));
    }

    #[test]
    fn batchnorm_fixed_point() {
        let x = DenseMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let u = batchnorm_step(&x, &[1.0, 2.0], &[1.0, 1.0], &DiagScaling::ones(2)).unwrap();
        assert_relative_eq!(u.theta[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(u.theta[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(u.d.as_slice()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(u.d.as_slice()[1], 1.0, epsilon = 1e-12);
        let z = batchnorm_step(&x, &[0.0, 0.0], &[1.0, 1.0], &DiagScaling::uniform(2, 3.0).unwrap()).unwrap();
        assert!(!z.updated);
        assert_eq!(z.d.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn orthonormal_design_one_iteration() {
        // columns e1 + e2 and e3 - e4 normalized
        let h = 0.5f64.sqrt();
        let x = DMatrix::from_row_slice(4, 2, &[h, 0.0, h, 0.0, 0.0, h, 0.0, -h]);
        let x = DenseMatrix::new(x).unwrap();
        let fit = gd_least_squares(&x, &[1.0, 2.0, 3.0, 4.0], StrategyKind::None.into(), 0.01, 100, &IpmConfig::default())
            .unwrap();
        assert_eq!(fit.trace.iterations, 1);
        assert!(fit.trace.converged);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in [
            StrategyKind::None,
            StrategyKind::FixedColstats,
            StrategyKind::Optimal,
            StrategyKind::Batchnorm,
            StrategyKind::AdaptiveOptimal,
        ] {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
    }

    #[test]
    fn bench_csv_header() {
        let csv = bench_csv(&[]);
        assert_eq!(csv, "strategy,n,p,seed,kappa_effective,iterations,converged\n");
    }
}
