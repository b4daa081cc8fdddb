//! Seeded random covariance and design matrices, and Monte-Carlo checks of
//! how well column normalization tracks the population correlation matrix.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cond_2, corr_from_cov, DenseMatrix, SymMatrix};
use crate::precondition::{scale_sym, DiagScaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    /// Log-spaced spectrum in `[1, target_cond]` under a random rotation.
    SpdRandom,
    /// `alpha`-dominant correlation matrix with log-spaced variances.
    DominantCorrWithScales,
    Identity,
    /// Gram matrix of a square Gaussian matrix. Such draws often have strongly
    /// correlated coordinates, and their correlation matrix can be worse
    /// conditioned than the covariance itself. `target_cond` is ignored.
    Table2Like,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovSpec {
    pub p: usize,
    pub kind: CovKind,
    pub target_cond: f64,
    /// Only read by [`CovKind::DominantCorrWithScales`].
    pub alpha: f64,
    pub seed: u64,
}

impl CovSpec {
    pub fn spd_random(p: usize, target_cond: f64, seed: u64) -> Self {
        CovSpec { p, kind: CovKind::SpdRandom, target_cond, alpha: f64::NAN, seed }
    }

    pub fn dominant(p: usize, target_cond: f64, alpha: f64, seed: u64) -> Self {
        CovSpec { p, kind: CovKind::DominantCorrWithScales, target_cond, alpha, seed }
    }

    pub fn identity(p: usize) -> Self {
        CovSpec { p, kind: CovKind::Identity, target_cond: 1.0, alpha: f64::NAN, seed: 0 }
    }

    pub fn table2_like(p: usize, seed: u64) -> Self {
        CovSpec { p, kind: CovKind::Table2Like, target_cond: 1.0, alpha: f64::NAN, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidSpec("p must be at least 1".into()));
        }
        if !(self.target_cond >= 1.0) || !self.target_cond.is_finite() {
            return Err(Error::InvalidSpec(format!("target_cond must be >= 1, got {}", self.target_cond)));
        }
        match self.kind {
            CovKind::SpdRandom if self.p == 1 && self.target_cond != 1.0 => Err(Error::InvalidSpec(
                "a 1x1 matrix always has condition number 1".into(),
            )),
            CovKind::DominantCorrWithScales if !(self.alpha > 1.0) => {
                Err(Error::InvalidSpec(format!("alpha must exceed 1, got {}", self.alpha)))
            }
            CovKind::DominantCorrWithScales if self.p == 1 && self.target_cond != 1.0 => Err(
                Error::InvalidSpec("a 1x1 matrix always has condition number 1".into()),
            ),
            _ => Ok(()),
        }
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn log_spaced(p: usize, top: f64) -> Vec<f64> {
    if p == 1 {
        return vec![1.0];
    }
    (0..p).map(|i| top.powf(i as f64 / (p - 1) as f64)).collect()
}

fn random_matrix<D: Distribution<f64>>(rng: &mut impl Rng, dist: &D, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = dist.sample(rng);
        }
    }
    m
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    random_matrix(rng, &StandardNormal, rows, cols)
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, signs fixed
/// by the diagonal of R).
pub fn random_orthogonal(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, p, p).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn gen_cov(spec: &CovSpec) -> Result<SymMatrix> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = rng_from_seed(spec.seed);
    match spec.kind {
        CovKind::Identity => Ok(SymMatrix::identity(p)),
        CovKind::SpdRandom => {
            let q = random_orthogonal(p, &mut rng);
            let lambda = log_spaced(p, spec.target_cond);
            let scaled = DMatrix::from_fn(p, p, |i, j| q[(i, j)] * lambda[j]);
            Ok(SymMatrix::symmetrize(scaled * q.transpose()))
        }
        CovKind::DominantCorrWithScales => {
            let unif = Uniform::new(-1.0, 1.0).expect("valid range");
            let mut c = DMatrix::identity(p, p);
            for i in 0..p {
                for j in i + 1..p {
                    let v: f64 = unif.sample(&mut rng);
                    c[(i, j)] = v;
                    c[(j, i)] = v;
                }
            }
            let max_row = (0..p)
                .map(|i| (0..p).filter(|&j| j != i).map(|j| c[(i, j)].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            if max_row > 0.0 {
                let shrink = (1.0 - 1e-12) / (spec.alpha * max_row);
                for i in 0..p {
                    for j in 0..p {
                        if i != j {
                            c[(i, j)] *= shrink;
                        }
                    }
                }
            }
            let mut scales = log_spaced(p, spec.target_cond);
            // random assignment of variances to coordinates
            for i in (1..p).rev() {
                let k = rng.random_range(0..=i);
                scales.swap(i, k);
            }
            let out = DMatrix::from_fn(p, p, |i, j| c[(i, j)] * (scales[i] * scales[j]).sqrt());
            Ok(SymMatrix::symmetrize(out))
        }
        CovKind::Table2Like => {
            let a = gaussian_matrix(&mut rng, p, p);
            let s = &a * a.transpose() / p as f64;
            Ok(SymMatrix::symmetrize(s))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowDist {
    Gaussian,
    /// Independent uniform entries on `[-sqrt(3), sqrt(3)]` (unit variance).
    Uniform,
}

/// `n` i.i.d. Gaussian rows with covariance `sigma` and mean `mu`.
pub fn sample_rows(n: usize, sigma: &SymMatrix, mu: &[f64], seed: u64) -> Result<DenseMatrix> {
    sample_rows_with(RowDist::Gaussian, n, sigma, mu, seed)
}

/// `X = G L^T + 1 mu^T` with `L = cholesky(sigma)` and `G` drawn from `dist`.
pub fn sample_rows_with(
    dist: RowDist,
    n: usize,
    sigma: &SymMatrix,
    mu: &[f64],
    seed: u64,
) -> Result<DenseMatrix> {
    let p = sigma.dim();
    if mu.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: mu.len() });
    }
    if n == 0 {
        return Err(Error::InvalidSpec("n must be positive".into()));
    }
    let l = cholesky(sigma)?;
    let mut rng = rng_from_seed(seed);
    let g = match dist {
        RowDist::Gaussian => gaussian_matrix(&mut rng, n, p),
        RowDist::Uniform => {
            let r = 3f64.sqrt();
            let unif = Uniform::new_inclusive(-r, r).expect("valid range");
            random_matrix(&mut rng, &unif, n, p)
        }
    };
    let mut x = g * l.as_matrix().transpose();
    for mut row in x.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mu) {
            *v += m;
        }
    }
    DenseMatrix::new(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialResult {
    pub n: usize,
    pub p: usize,
    /// `|kappa_raw / cond(sigma) - kappa_scaled / cond(corr(sigma))|`
    pub gap: f64,
    /// `cond(X^T X)`
    pub kappa_raw: f64,
    /// `cond(X0^T X0)` with `X0` the column-normalized sample.
    pub kappa_scaled: f64,
    /// Seed that produced the accepted sample.
    pub seed: u64,
}

const RETRY_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

struct Population {
    kappa: f64,
    kappa_corr: f64,
}

impl Population {
    fn new(sigma: &SymMatrix) -> Result<Self> {
        let kappa = cond_2(sigma)?.kappa;
        let (corr, _) = corr_from_cov(sigma)?;
        let kappa_corr = cond_2(&corr)?.kappa;
        Ok(Population { kappa, kappa_corr })
    }
}

fn gram_conds(x: &DenseMatrix, divisor: f64) -> Result<(f64, f64)> {
    let gram = x.gram();
    let kappa_raw = cond_2(&gram)?.kappa;
    let dhat: Vec<f64> = gram.diagonal().iter().map(|v| v / divisor).collect();
    let dhat = DiagScaling::new(dhat).map_err(|_| Error::SingularMatrix)?;
    let kappa_scaled = cond_2(&scale_sym(&gram, &dhat)?)?.kappa;
    Ok((kappa_raw, kappa_scaled))
}

fn trial_with(n: usize, sigma: &SymMatrix, pop: &Population, seed: u64, divisor: f64) -> Result<TrialResult> {
    let p = sigma.dim();
    if n <= p {
        return Err(Error::InvalidSpec(format!("n = {n} must exceed p = {p}")));
    }
    let mu = vec![0.0; p];
    for attempt in 0..=3u64 {
        let s = seed.wrapping_add(attempt.wrapping_mul(RETRY_STRIDE));
        let x = sample_rows(n, sigma, &mu, s)?;
        match gram_conds(&x, divisor) {
            Ok((kappa_raw, kappa_scaled)) => {
                let gap = (kappa_raw / pop.kappa - kappa_scaled / pop.kappa_corr).abs();
                return Ok(TrialResult { n, p, gap, kappa_raw, kappa_scaled, seed: s });
            }
            Err(Error::SingularMatrix) => {
                log::debug!("rank-deficient sample for seed {s}, retrying");
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::SingularSample)
}

/// One draw of `X` (`n` Gaussian rows with covariance `sigma`), normalized by
/// the squared column norms `(X^T X)_ii`.
pub fn concentration_trial(n: usize, sigma: &SymMatrix, seed: u64) -> Result<TrialResult> {
    let pop = Population::new(sigma)?;
    trial_with(n, sigma, &pop, seed, 1.0)
}

/// Same as [`concentration_trial`] with the column statistics divided by
/// `divisor` (e.g. `n - 1` for sample variances).
pub fn concentration_trial_scaled(n: usize, sigma: &SymMatrix, seed: u64, divisor: f64) -> Result<TrialResult> {
    if !(divisor > 0.0) {
        return Err(Error::InvalidSpec("divisor must be positive".into()));
    }
    let pop = Population::new(sigma)?;
    trial_with(n, sigma, &pop, seed, divisor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub median_gap: f64,
    pub q90_gap: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Median and 90% quantile of the gap over `trials` seeds
/// (`base_seed + trial`) for each `n`. Trials run in parallel.
pub fn concentration_sweep(
    sigma: &SymMatrix,
    ns: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<Vec<SweepRow>> {
    let p = sigma.dim();
    if trials == 0 {
        return Err(Error::InvalidSpec("trials must be positive".into()));
    }
    if ns.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidSpec("sample sizes must be ascending".into()));
    }
    if let Some(&n) = ns.iter().find(|&&n| n <= p) {
        return Err(Error::InvalidSpec(format!("n = {n} must exceed p = {p}")));
    }
    let pop = Population::new(sigma)?;
    ns.iter()
        .map(|&n| {
            let gaps = (0..trials as u64)
                .into_par_iter()
                .map(|t| trial_with(n, sigma, &pop, base_seed.wrapping_add(t), 1.0).map(|r| r.gap))
                .collect::<Result<Vec<f64>>>()?;
            log::debug!("sweep n={n} trials={trials}");
            Ok(SweepRow { n, median_gap: quantile(&gaps, 0.5), q90_gap: quantile(&gaps, 0.9) })
        })
        .collect()
}

/// CSV with header `n,median_gap,q90_gap` and 17 significant digits.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,median_gap,q90_gap\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.16e},{:.16e}", r.n, r.median_gap, r.q90_gap);
    }
    out
}
