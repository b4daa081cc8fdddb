//! Heuristic diagonal preconditioners and their application.
//!
//! Scalings follow one convention throughout the crate: a [`DiagScaling`] `d`
//! acts as `D^{-1/2}`, i.e. `X -> X D^{-1/2}` and `M -> D^{-1/2} M D^{-1/2}`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SymMatrix};

/// Strictly positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DiagScaling(Vec<f64>);

impl DiagScaling {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::InvalidMatrix("empty scaling".into()));
        }
        if let Some(i) = d.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "scaling entry {i} is not a positive finite number: {}",
                d[i]
            )));
        }
        Ok(DiagScaling(d))
    }

    pub fn ones(p: usize) -> Self {
        DiagScaling(vec![1.0; p])
    }

    pub fn uniform(p: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

/// Which column statistic to use in [`col_stats_precond`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColStat {
    /// Unbiased column variance.
    Variance,
    /// Column norm squared over `n - 1` (uncentered).
    Norm2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibrationResult {
    pub d_row: DiagScaling,
    pub d_col: DiagScaling,
    pub iterations: usize,
    pub converged: bool,
}

pub fn jacobi_precond(m: &SymMatrix) -> Result<DiagScaling> {
    let d = m.diagonal();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    DiagScaling::new(d)
}

pub fn col_stats_precond(x: &DenseMatrix, mode: ColStat) -> Result<DiagScaling> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::InvalidMatrix("need at least two rows".into()));
    }
    let m = x.as_matrix();
    let mut d = Vec::with_capacity(x.cols());
    for (j, col) in m.column_iter().enumerate() {
        let mu = match mode {
            ColStat::Variance => col.sum() / n as f64,
            ColStat::Norm2 => 0.0,
        };
        let ss: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum();
        let v = ss / (n - 1) as f64;
        if !(v > 0.0) {
            return Err(Error::DegenerateColumn(j));
        }
        d.push(v);
    }
    DiagScaling::new(d)
}

fn lp_norm<'a>(it: impl Iterator<Item = &'a f64>, p: f64) -> f64 {
    if p.is_infinite() {
        it.fold(0.0_f64, |acc, v| acc.max(v.abs()))
    } else if p == 1.0 {
        it.map(|v| v.abs()).sum()
    } else {
        it.map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Two-sided diagonal equilibration: finds `d_row`, `d_col` so that every row
/// and column of `diag(d_row) A diag(d_col)` has unit `l_p` norm.
///
/// Each sweep measures the row and column norms of the current scaled matrix
/// and divides both sides by their square roots, so symmetric inputs keep
/// `d_row == d_col`.
pub fn sinkhorn_equilibrate(
    a: &DenseMatrix,
    p_norm: f64,
    max_iter: usize,
    tol: f64,
) -> Result<EquilibrationResult> {
    if !(p_norm >= 1.0) {
        return Err(Error::InvalidSpec(format!("p_norm must be >= 1, got {p_norm}")));
    }
    let m = a.as_matrix();
    let (nr, nc) = m.shape();
    for (i, row) in m.row_iter().enumerate() {
        if row.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateMatrix(format!("row {i} is zero")));
        }
    }
    for (j, col) in m.column_iter().enumerate() {
        if col.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateMatrix(format!("column {j} is zero")));
        }
    }
    let mut r = vec![1.0; nr];
    let mut c = vec![1.0; nc];
    let mut iterations = 0;
    let converged = loop {
        let scaled = DMatrix::from_fn(nr, nc, |i, j| r[i] * m[(i, j)] * c[j]);
        let rn: Vec<f64> = scaled.row_iter().map(|row| lp_norm(row.iter(), p_norm)).collect();
        let cn: Vec<f64> = scaled.column_iter().map(|col| lp_norm(col.iter(), p_norm)).collect();
        let err = rn
            .iter()
            .chain(cn.iter())
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max);
        if err <= tol {
            break true;
        }
        if iterations >= max_iter {
            break false;
        }
        for (ri, n) in r.iter_mut().zip(&rn) {
            *ri /= n.sqrt();
        }
        for (cj, n) in c.iter_mut().zip(&cn) {
            *cj /= n.sqrt();
        }
        iterations += 1;
    };
    Ok(EquilibrationResult {
        d_row: DiagScaling::new(r)?,
        d_col: DiagScaling::new(c)?,
        iterations,
        converged,
    })
}

/// `X D^{-1/2}`: column `j` multiplied by `d_j^{-1/2}`.
pub fn apply_scaling(x: &DenseMatrix, d: &DiagScaling) -> Result<DenseMatrix> {
    if x.cols() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            found: d.len(),
        });
    }
    let mut out = x.as_matrix().clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col /= d.as_slice()[j].sqrt();
    }
    DenseMatrix::new(out)
}

/// `D^{-1/2} M D^{-1/2}`.
pub fn scale_sym(m: &SymMatrix, d: &DiagScaling) -> Result<SymMatrix> {
    if m.dim() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: d.len(),
        });
    }
    let s: Vec<f64> = d.as_slice().iter().map(|v| v.sqrt()).collect();
    let a = m.as_matrix();
    let out = DMatrix::from_fn(m.dim(), m.dim(), |i, j| a[(i, j)] / (s[i] * s[j]));
    Ok(SymMatrix::symmetrize(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jacobi_reads_diagonal() {
        assert_eq!(jacobi_precond(&SymMatrix::identity(3)).unwrap().as_slice(), &[1.0; 3]);
        let m = SymMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(jacobi_precond(&m).unwrap().as_slice(), &[4.0, 1.0]);
        let bad = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(jacobi_precond(&bad), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn col_stats_examples() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]]).unwrap();
        assert_eq!(col_stats_precond(&x, ColStat::Variance).unwrap().as_slice(), &[2.0, 8.0]);
        assert_eq!(col_stats_precond(&x, ColStat::Norm2).unwrap().as_slice(), &[2.0, 8.0]);
        let c = DenseMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 3.0], vec![5.0, 3.0]]).unwrap();
        assert!(matches!(
            col_stats_precond(&c, ColStat::Variance),
            Err(Error::DegenerateColumn(1))
        ));
    }

    #[test]
    fn sinkhorn_examples() {
        let r = sinkhorn_equilibrate(&SymMatrix::identity(3).into(), 2.0, 100, 1e-10).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert_eq!(r.d_row.as_slice(), &[1.0; 3]);

        let ones = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = sinkhorn_equilibrate(&ones, 1.0, 100, 1e-12).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(r.d_row.as_slice()[i] * r.d_col.as_slice()[j], 0.5);
            }
        }

        let d = SymMatrix::from_diagonal(&[4.0, 1.0]).into();
        let r = sinkhorn_equilibrate(&d, 2.0, 100, 1e-12).unwrap();
        assert_relative_eq!(r.d_row.as_slice()[0] * 4.0 * r.d_col.as_slice()[0], 1.0);
        assert_relative_eq!(r.d_row.as_slice()[0], 0.5);
        assert_relative_eq!(r.d_col.as_slice()[0], 0.5);
    }

    #[test]
    fn sinkhorn_general_positive_matrix() {
        let a = DenseMatrix::from_rows(&[
            vec![1.0, 20.0, 0.3],
            vec![4.0, 0.5, 7.0],
            vec![0.01, 2.0, 9.0],
        ])
        .unwrap();
        for p in [1.0, 2.0, f64::INFINITY] {
            let r = sinkhorn_equilibrate(&a, p, 10_000, 1e-10).unwrap();
            assert!(r.converged, "p = {p}");
            let m = a.as_matrix();
            for i in 0..3 {
                let row: Vec<f64> =
                    (0..3).map(|j| r.d_row.as_slice()[i] * m[(i, j)] * r.d_col.as_slice()[j]).collect();
                assert!((lp_norm(row.iter(), p) - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn sinkhorn_rejects_zero_row() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            sinkhorn_equilibrate(&a, 2.0, 10, 1e-10),
            Err(Error::DegenerateMatrix(_))
        ));
    }

    #[test]
    fn apply_and_scale_examples() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(apply_scaling(&x, &DiagScaling::ones(2)).unwrap(), x);
        let i2 = SymMatrix::identity(2).into();
        let d = DiagScaling::new(vec![4.0, 9.0]).unwrap();
        let s = apply_scaling(&i2, &d).unwrap();
        assert_relative_eq!(s.as_matrix()[(0, 0)], 0.5);
        assert_relative_eq!(s.as_matrix()[(1, 1)], 1.0 / 3.0);
        assert!(matches!(
            apply_scaling(&x, &DiagScaling::ones(3)),
            Err(Error::DimensionMismatch { .. })
        ));

        let m = SymMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let c = scale_sym(&m, &DiagScaling::new(vec![4.0, 1.0]).unwrap()).unwrap();
        assert_relative_eq!(c.as_matrix()[(0, 0)], 1.0);
        assert_relative_eq!(c.as_matrix()[(0, 1)], 0.5);
        assert_eq!(scale_sym(&m, &DiagScaling::ones(2)).unwrap(), m);
    }

    #[test]
    fn norm2_scaling_gives_columns_of_norm_n_minus_1() {
        let x = DenseMatrix::from_rows(&[
            vec![1.0, -3.0, 0.2],
            vec![2.0, 5.0, 0.1],
            vec![-0.5, 1.0, -0.7],
            vec![4.0, 0.0, 0.3],
        ])
        .unwrap();
        let d = col_stats_precond(&x, ColStat::Norm2).unwrap();
        let s = apply_scaling(&x, &d).unwrap();
        for col in s.as_matrix().column_iter() {
            assert_relative_eq!(col.norm_squared(), 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn diag_scaling_rejects_nonpositive() {
        assert!(DiagScaling::new(vec![1.0, 0.0]).is_err());
        assert!(DiagScaling::new(vec![1.0, f64::NAN]).is_err());
        assert!(DiagScaling::new(vec![]).is_err());
    }
}
