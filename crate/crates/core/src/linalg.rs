//! Dense symmetric linear algebra: eigendecomposition, condition numbers,
//! Cholesky, the covariance to correlation transform and diagonal dominance.
//!
//! Everything here works on small dense matrices held in [`nalgebra::DMatrix`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::precondition::DiagScaling;

/// Relative eigenvalue floor below which a matrix is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-14;

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix after checking
    /// `|a_ij - a_ji| <= 1e-12 * (1 + |a_ij|)` and finiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "expected a nonempty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::InvalidMatrix(format!(
                        "not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds a symmetric matrix from `(m + m^T) / 2`. Used for quantities that
    /// are symmetric in exact arithmetic.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.nrows() == m.ncols() && m.nrows() > 0);
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(dense_from_rows(rows)?)
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.0)
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Dense rectangular matrix, e.g. an `n x p` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::InvalidMatrix("empty matrix".into()));
        }
        Ok(DenseMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(dense_from_rows(rows)?)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `X^T X`.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::symmetrize(self.0.transpose() * &self.0)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.0)
    }
}

impl AsRef<DMatrix<f64>> for DenseMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<SymMatrix> for DenseMatrix {
    fn from(m: SymMatrix) -> Self {
        DenseMatrix(m.0)
    }
}

fn dense_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n == 0 || p == 0 {
        return Err(Error::InvalidMatrix("empty matrix".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Extreme eigenvalues (or singular values) and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CondReport {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub kappa: f64,
}

impl CondReport {
    fn from_extremes(max: f64, min: f64) -> Result<Self> {
        if !(min > SINGULAR_RTOL * max) || !max.is_finite() {
            return Err(Error::SingularMatrix);
        }
        Ok(CondReport {
            lambda_max: max,
            lambda_min: min,
            kappa: max / min,
        })
    }
}

/// Diagonal dominance summary. `alpha` is `f64::INFINITY` when every
/// off-diagonal entry is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport {
    pub alpha: f64,
    pub diag_ratio: f64,
}

impl DominanceReport {
    pub fn alpha_is_infinite(&self) -> bool {
        self.alpha.is_infinite()
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(m: &SymMatrix) -> SymEigen {
    let (values, vectors) = eigh(&m.0);
    let p = values.len();
    let order: Vec<usize> = (0..p).rev().collect();
    SymEigen {
        values: order.iter().map(|&k| values[k]).collect(),
        vectors: DMatrix::from_fn(p, p, |i, j| vectors[(i, order[j])]),
    }
}

/// Spectral condition number `lambda_max / lambda_min` of an SPD matrix.
pub fn cond_2(m: &SymMatrix) -> Result<CondReport> {
    let (lo, hi) = extreme_eigenvalues(&m.0);
    CondReport::from_extremes(hi, lo)
}

/// `sigma_max / sigma_min` of a tall full-column-rank matrix.
pub fn cond_rect(x: &DenseMatrix) -> Result<CondReport> {
    if x.rows() < x.cols() {
        return Err(Error::SingularMatrix);
    }
    let sv = x.0.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    CondReport::from_extremes(max, min)
}

/// Condition number in the induced infinity norm (maximum absolute row sum).
pub fn cond_inf<A: AsRef<DMatrix<f64>>>(m: &A) -> Result<f64> {
    let m = m.as_ref();
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidMatrix("cond_inf needs a square matrix".into()));
    }
    let inv = m.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let c = inf_norm(m) * inf_norm(&inv);
    if !c.is_finite() || c > 1.0 / SINGULAR_RTOL {
        return Err(Error::SingularMatrix);
    }
    Ok(c)
}

pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Lower-triangular Cholesky factor `L` with `L L^T = M`.
pub fn cholesky(m: &SymMatrix) -> Result<DenseMatrix> {
    let chol = m.0.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(DenseMatrix(chol.l()))
}

/// Splits a covariance matrix into its correlation matrix and the variances
/// `d_i = S_ii`.
pub fn corr_from_cov(s: &SymMatrix) -> Result<(SymMatrix, DiagScaling)> {
    let d = s.diagonal();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    let p = s.dim();
    let sd: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let corr = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            s.0[(i, j)] / (sd[i] * sd[j])
        }
    });
    Ok((SymMatrix::symmetrize(corr), DiagScaling::new(d)?))
}

pub fn dominance(m: &SymMatrix) -> DominanceReport {
    let p = m.dim();
    let mut alpha = f64::INFINITY;
    let mut dmax = 0.0_f64;
    let mut dmin = f64::INFINITY;
    for i in 0..p {
        let diag = m.0[(i, i)].abs();
        dmax = dmax.max(diag);
        dmin = dmin.min(diag);
        let off: f64 = (0..p)
            .filter(|&j| j != i)
            .map(|j| m.0[(i, j)].abs())
            .sum();
        if off > 0.0 {
            alpha = alpha.min(diag / off);
        }
    }
    let diag_ratio = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    DominanceReport { alpha, diag_ratio }
}

// Internal helpers shared by the other modules.

/// Ascending eigenvalues and eigenvectors of a symmetric matrix.
pub(crate) fn eigh(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let p = m.nrows();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(p, p, |i, j| eig.eigenvectors[(i, idx[j])]);
    (values, vectors)
}

pub(crate) fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    (eig.min(), eig.max())
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// `f(M)` for a symmetric `M` through its eigendecomposition.
pub(crate) fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = eigh(m);
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * f(vals[j]));
    let out = scaled * vecs.transpose();
    (&out + out.transpose()) * 0.5
}

/// Inverse of an SPD matrix, `None` if the Cholesky factorization fails.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// `log det` of an SPD matrix, `None` unless positive definite.
pub(crate) fn spd_logdet(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let v = l[(i, i)];
        if !(v > 0.0) {
            return None;
        }
        acc += 2.0 * v.ln();
    }
    Some(acc)
}

/// `M - diag(d)` scaled by `(a, b)`: returns `a * diag(d) - b * M`.
pub(crate) fn diag_minus(d: &[f64], a: f64, m: &DMatrix<f64>, b: f64) -> DMatrix<f64> {
    let mut out = m * (-b);
    for (i, &v) in d.iter().enumerate() {
        out[(i, i)] += a * v;
    }
    out
}
