//! Optimal diagonal preconditioning.
//!
//! Finds a positive diagonal `D` minimizing `kappa` subject to
//! `D <= M <= kappa * D`, which makes `cond(D^{-1/2} M D^{-1/2}) <= kappa`.
//! Two solvers are provided: a potential-reduction interior-point method that
//! follows analytic centers of
//!
//! ```text
//! P(D, kappa) = log det(M - D) + log det(kappa D - M) + log det D
//! ```
//!
//! recentering with Nesterov-Todd steps, and a bisection on `kappa` driven by a
//! feasibility oracle.
//!
//! `D` has `p` degrees of freedom, so the multiplier of the `D >= 0` block is a
//! diagonal `Z` and dual feasibility `Z + kappa Y = X` is imposed on the
//! diagonal entries.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Block, Error, Result};
use crate::linalg::{
    self, cond_2, diag_minus, dominance, min_eigenvalue, spd_inverse, spd_logdet, sym_fn, SymMatrix,
};
use crate::precondition::{scale_sym, DiagScaling};

/// Settings shared by the interior-point and bisection solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IpmConfig {
    /// Potential reduction per outer step, in `(0, 1)`.
    pub beta: f64,
    /// Relative accuracy target on `kappa`.
    pub eps: f64,
    pub max_outer: usize,
    /// Centering stops when `max_i |d_i dP/dd_i| <= newton_tol`.
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for IpmConfig {
    fn default() -> Self {
        IpmConfig {
            beta: 0.05,
            eps: 1e-3,
            max_outer: 10_000,
            newton_tol: 1e-8,
            max_newton: 200,
        }
    }
}

impl IpmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidSpec(format!("beta must be in (0,1), got {}", self.beta)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidSpec(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(Error::InvalidSpec("newton_tol and max_newton must be positive".into()));
        }
        Ok(())
    }
}

/// Primal-dual interior point for a fixed `kappa`.
#[derive(Debug, Clone)]
pub struct CenterState {
    pub kappa: f64,
    pub d: DiagScaling,
    /// `M - D`
    pub r: SymMatrix,
    /// `kappa D - M`
    pub s: SymMatrix,
    /// Multiplier of `M - D >= 0`.
    pub xm: SymMatrix,
    /// Multiplier of `kappa D - M >= 0`.
    pub ym: SymMatrix,
    /// Multiplier of `D >= 0` (diagonal).
    pub zm: SymMatrix,
    pub delta_rx: f64,
    pub delta_sy: f64,
    pub delta_dz: f64,
}

impl CenterState {
    /// Assembles a state from primal `d` and multipliers, computing slacks and
    /// proximities. Fails with `Infeasible` unless the slacks are positive
    /// definite.
    pub fn from_parts(
        m: &SymMatrix,
        kappa: f64,
        d: DiagScaling,
        xm: SymMatrix,
        ym: SymMatrix,
        z: &[f64],
    ) -> Result<Self> {
        let p = m.dim();
        if d.len() != p || xm.dim() != p || ym.dim() != p || z.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: d.len() });
        }
        let r = diag_minus(d.as_slice(), -1.0, m.as_matrix(), -1.0);
        let s = diag_minus(d.as_slice(), kappa, m.as_matrix(), 1.0);
        let r_half = psd_sqrt(&r).ok_or(Error::Infeasible(Block::Lower))?;
        let s_half = psd_sqrt(&s).ok_or(Error::Infeasible(Block::Upper))?;
        let delta_rx = proximity_with_root(&r_half, xm.as_matrix());
        let delta_sy = proximity_with_root(&s_half, ym.as_matrix());
        let delta_dz = d
            .as_slice()
            .iter()
            .zip(z)
            .map(|(di, zi)| (di * zi - 1.0).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(CenterState {
            kappa,
            d,
            r: SymMatrix::symmetrize(r),
            s: SymMatrix::symmetrize(s),
            xm,
            ym,
            zm: SymMatrix::from_diagonal(z),
            delta_rx,
            delta_sy,
            delta_dz,
        })
    }

    /// State at `d` with multipliers `X = R^{-1}`, `Y = S^{-1}` and
    /// `Z = diag(X - kappa Y)`. Exact when `d` is the analytic center.
    pub fn at_slack_inverses(m: &SymMatrix, kappa: f64, d: DiagScaling) -> Result<Self> {
        let r = diag_minus(d.as_slice(), -1.0, m.as_matrix(), -1.0);
        let s = diag_minus(d.as_slice(), kappa, m.as_matrix(), 1.0);
        let x = spd_inverse(&r).ok_or(Error::Infeasible(Block::Lower))?;
        let y = spd_inverse(&s).ok_or(Error::Infeasible(Block::Upper))?;
        let z: Vec<f64> = (0..m.dim()).map(|i| x[(i, i)] - kappa * y[(i, i)]).collect();
        Self::from_parts(m, kappa, d, SymMatrix::symmetrize(x), SymMatrix::symmetrize(y), &z)
    }

    pub fn z(&self) -> Vec<f64> {
        self.zm.diagonal()
    }

    pub fn max_proximity(&self) -> f64 {
        self.delta_rx.max(self.delta_sy).max(self.delta_dz)
    }

    /// `|| diag(Z + kappa Y - X) ||_2`.
    pub fn multiplier_residual(&self) -> f64 {
        let (x, y, z) = (self.xm.as_matrix(), self.ym.as_matrix(), self.zm.as_matrix());
        (0..self.d.len())
            .map(|i| (z[(i, i)] + self.kappa * y[(i, i)] - x[(i, i)]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of [`ipm_optimize`] or [`bisect_optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub d_opt: DiagScaling,
    /// `cond_2(M)` before scaling.
    pub kappa_before: f64,
    /// `cond_2(D^{-1/2} M D^{-1/2})` for the returned `D`.
    pub kappa_achieved: f64,
    /// Final `kappa` of the outer loop; `D` is strictly feasible for it.
    pub kappa_certified: f64,
    pub outer_iterations: usize,
    /// `(kappa, P(D, kappa))` after each outer step.
    pub trace: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct OptResultJson<'a> {
    kappa_before: f64,
    kappa_after: f64,
    kappa_certified: f64,
    d: &'a [f64],
    outer_iterations: usize,
    trace: Vec<[f64; 2]>,
}

impl OptResult {
    /// JSON object with keys `kappa_before`, `kappa_after`, `kappa_certified`,
    /// `d`, `outer_iterations` and `trace`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(OptResultJson {
            kappa_before: self.kappa_before,
            kappa_after: self.kappa_achieved,
            kappa_certified: self.kappa_certified,
            d: self.d_opt.as_slice(),
            outer_iterations: self.outer_iterations,
            trace: self.trace.iter().map(|&(k, p)| [k, p]).collect(),
        })
        .expect("OptResult serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(DiagScaling),
    Infeasible,
}

/// Output of [`dominance_ratio_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioBound {
    /// `cond(S) / cond(corr(S))`
    pub lhs: f64,
    /// `(1/p) ((alpha-1)/(alpha+1))^2 * max(S_ii) / min(S_ii)`
    pub rhs: f64,
    pub alpha: f64,
}

impl RatioBound {
    /// The bound only claims anything when `alpha > 1`.
    pub fn applies(&self) -> bool {
        self.alpha > 1.0
    }

    pub fn holds(&self) -> bool {
        !self.applies() || self.lhs >= self.rhs - 1e-9
    }
}

// Matrix helpers.

fn psd_sqrt(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (vals, vecs) = linalg::eigh(a);
    if !(vals[0] > 0.0) {
        return None;
    }
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * vals[j].sqrt());
    let out = scaled * vecs.transpose();
    Some((&out + out.transpose()) * 0.5)
}

fn proximity_with_root(a_half: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let inner = a_half * b * a_half;
    (inner - DMatrix::identity(b.nrows(), b.ncols())).norm()
}

/// `delta(A, B) = || A^{1/2} B A^{1/2} - I ||_F` for SPD `A`.
pub fn proximity(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    let h = psd_sqrt(a.as_matrix()).ok_or(Error::NotPositiveDefinite)?;
    Ok(proximity_with_root(&h, b.as_matrix()))
}

/// Inverse of the Nesterov-Todd scaling `G = A^{1/2} (A^{1/2} B A^{1/2})^{-1/2} A^{1/2}`,
/// computed as `A^{-1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}`.
fn nt_scaling_inverse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (vals, vecs) = linalg::eigh(a);
    if !(vals[0] > 0.0) {
        return None;
    }
    let n = a.nrows();
    let half = DMatrix::from_fn(n, n, |i, j| vecs[(i, j)] * vals[j].sqrt()) * vecs.transpose();
    let inv_half =
        DMatrix::from_fn(n, n, |i, j| vecs[(i, j)] / vals[j].sqrt()) * vecs.transpose();
    let inner = &half * b * &half;
    let inner = (&inner + inner.transpose()) * 0.5;
    let (iv, _) = linalg::eigh(&inner);
    if !(iv[0] > 0.0) {
        return None;
    }
    let root = sym_fn(&inner, f64::sqrt);
    let g = &inv_half * root * &inv_half;
    Some((&g + g.transpose()) * 0.5)
}

fn check_spd(m: &SymMatrix) -> Result<()> {
    m.as_matrix()
        .clone()
        .cholesky()
        .map(|_| ())
        .ok_or(Error::NotPositiveDefinite)
}

fn potential_raw(m: &DMatrix<f64>, d: &[f64], kappa: f64, shift: f64) -> Result<f64> {
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Infeasible(Block::Diagonal));
    }
    let lower = spd_logdet(&diag_minus(d, -1.0, m, -1.0)).ok_or(Error::Infeasible(Block::Lower))?;
    let mut upper = diag_minus(d, kappa, m, 1.0);
    if shift != 0.0 {
        for i in 0..d.len() {
            upper[(i, i)] += shift;
        }
    }
    let upper = spd_logdet(&upper).ok_or(Error::Infeasible(Block::Upper))?;
    Ok(lower + upper + d.iter().map(|v| v.ln()).sum::<f64>())
}

/// `log det(M - D) + log det(kappa D - M) + log det D`.
pub fn potential(m: &SymMatrix, d: &DiagScaling, kappa: f64) -> Result<f64> {
    if d.len() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: d.len() });
    }
    potential_raw(m.as_matrix(), d.as_slice(), kappa, 0.0)
}

/// Gradient and negated Hessian of the (optionally slack-shifted) potential
/// in the diagonal coordinates.
fn grad_hess(
    m: &DMatrix<f64>,
    d: &[f64],
    kappa: f64,
    shift: f64,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let p = d.len();
    let r_inv = spd_inverse(&diag_minus(d, -1.0, m, -1.0))?;
    let mut upper = diag_minus(d, kappa, m, 1.0);
    for i in 0..p {
        upper[(i, i)] += shift;
    }
    let s_inv = spd_inverse(&upper)?;
    let g = DVector::from_fn(p, |i, _| -r_inv[(i, i)] + kappa * s_inv[(i, i)] + 1.0 / d[i]);
    let h = DMatrix::from_fn(p, p, |i, j| {
        let mut v = r_inv[(i, j)].powi(2) + kappa * kappa * s_inv[(i, j)].powi(2);
        if i == j {
            v += 1.0 / (d[i] * d[i]);
        }
        v
    });
    Some((g, h))
}

enum NewtonOutcome {
    Converged(Vec<f64>),
    Stalled { d: Vec<f64>, iterations: usize, grad_norm: f64 },
}

/// Damped Newton ascent of the (shifted) potential from a strictly interior
/// `d`. Stops when `stop(g, decrement)` holds.
fn newton_ascent(
    m: &DMatrix<f64>,
    mut d: Vec<f64>,
    kappa: f64,
    shift: f64,
    max_iter: usize,
    stop: impl Fn(&DVector<f64>, &[f64], f64) -> bool,
) -> Result<NewtonOutcome> {
    let mut value = potential_raw(m, &d, kappa, shift)?;
    let mut grad_norm = f64::INFINITY;
    for it in 0..max_iter {
        let (g, h) = grad_hess(m, &d, kappa, shift)
            .ok_or_else(|| Error::NumericalBreakdown("slack lost definiteness".into()))?;
        grad_norm = g.amax();
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::NumericalBreakdown("potential Hessian is singular".into()))?;
        let step = chol.solve(&g);
        let decrement = g.dot(&step);
        if stop(&g, &d, decrement) {
            return Ok(NewtonOutcome::Converged(d));
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = d.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if let Ok(v) = potential_raw(m, &trial, kappa, shift) {
                // full steps inside the quadratic convergence region
                if decrement < 0.0625 || v >= value + 1e-4 * t * decrement {
                    accepted = Some((trial, v));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, v)) => {
                log::trace!("newton it={it} grad={grad_norm:e} step={t} value={v}");
                d = trial;
                value = v;
            }
            None => {
                return Ok(NewtonOutcome::Stalled { d, iterations: it, grad_norm });
            }
        }
    }
    if let Some((g, _)) = grad_hess(m, &d, kappa, shift) {
        grad_norm = g.amax();
        if stop(&g, &d, 0.0) {
            return Ok(NewtonOutcome::Converged(d));
        }
    }
    Ok(NewtonOutcome::Stalled { d, iterations: max_iter, grad_norm })
}

/// Analytic center of `{D : D <= M <= kappa D}` by damped Newton ascent of the
/// potential with Armijo backtracking.
pub fn center(m: &SymMatrix, kappa: f64, d_init: &DiagScaling, cfg: &IpmConfig) -> Result<CenterState> {
    cfg.validate()?;
    if d_init.len() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: d_init.len() });
    }
    let tol = cfg.newton_tol;
    let outcome = newton_ascent(
        m.as_matrix(),
        d_init.as_slice().to_vec(),
        kappa,
        0.0,
        cfg.max_newton,
        |g, d, _| g.iter().zip(d).all(|(gi, di)| (gi * di).abs() <= tol),
    )?;
    match outcome {
        NewtonOutcome::Converged(d) => CenterState::at_slack_inverses(m, kappa, DiagScaling::new(d)?),
        NewtonOutcome::Stalled { d, iterations, grad_norm } => {
            let best = CenterState::at_slack_inverses(m, kappa, DiagScaling::new(d)?)?;
            Err(Error::NoConvergence { iterations, grad_norm, best: Box::new(best) })
        }
    }
}

/// One Nesterov-Todd recentering step at fixed `kappa`.
///
/// With `G_R`, `G_S` the NT scalings of `(R, X)` and `(S, Y)`, the step
/// `dd` solves `(G_R^{-1} o G_R^{-1} + kappa^2 G_S^{-1} o G_S^{-1} + diag(z/d)) dd = grad P(d)`
/// (`o` is the entrywise product); multipliers follow from their NT equations.
pub fn nt_step(state: &CenterState, m: &SymMatrix) -> Result<CenterState> {
    let delta = state.max_proximity();
    if !(delta <= 0.9) {
        return Err(Error::OutOfRegion(delta));
    }
    let p = m.dim();
    let kappa = state.kappa;
    let d = state.d.as_slice();
    let z = state.z();
    let (r, s) = (state.r.as_matrix(), state.s.as_matrix());
    let (x, y) = (state.xm.as_matrix(), state.ym.as_matrix());
    let breakdown = |what: &str| Error::NumericalBreakdown(what.to_string());

    let u_inv = nt_scaling_inverse(r, x).ok_or_else(|| breakdown("NT scaling of (R, X)"))?;
    let v_inv = nt_scaling_inverse(s, y).ok_or_else(|| breakdown("NT scaling of (S, Y)"))?;
    let r_inv = spd_inverse(r).ok_or_else(|| breakdown("R lost definiteness"))?;
    let s_inv = spd_inverse(s).ok_or_else(|| breakdown("S lost definiteness"))?;
    if z.iter().any(|&v| !(v > 0.0)) {
        return Err(breakdown("Z is not positive"));
    }

    let h = DMatrix::from_fn(p, p, |i, j| {
        let mut v = u_inv[(i, j)].powi(2) + kappa * kappa * v_inv[(i, j)].powi(2);
        if i == j {
            v += z[i] / d[i];
        }
        v
    });
    let g = DVector::from_fn(p, |i, _| 1.0 / d[i] + kappa * s_inv[(i, i)] - r_inv[(i, i)]);
    let dd = h
        .cholesky()
        .ok_or_else(|| breakdown("NT system is singular"))?
        .solve(&g);
    let dd_mat = DMatrix::from_diagonal(&dd);

    let dx = &r_inv - x + &u_inv * &dd_mat * &u_inv;
    let dy = &s_inv - y - (&v_inv * &dd_mat * &v_inv) * kappa;
    let d1: Vec<f64> = (0..p).map(|i| d[i] + dd[i]).collect();
    let z1: Vec<f64> = (0..p).map(|i| z[i] + (1.0 / d[i] - z[i] - z[i] / d[i] * dd[i])).collect();
    let d1 = DiagScaling::new(d1).map_err(|_| breakdown("D left the positive orthant"))?;
    CenterState::from_parts(
        m,
        kappa,
        d1,
        SymMatrix::symmetrize(x + dx),
        SymMatrix::symmetrize(y + dy),
        &z1,
    )
    .map_err(|e| match e {
        Error::Infeasible(b) => Error::NumericalBreakdown(format!("{b} lost definiteness")),
        other => other,
    })
}

/// Decreases `kappa` by `beta / Tr(D (kappa D - M)^{-1})` and shifts the
/// multipliers so `Z + kappa Y = X` holds at the new `kappa`.
///
/// At an approximate center the trace is taken as the larger of
/// `Tr(D S^{-1})` and `Tr(D Y)`; both agree at the exact center.
pub fn kappa_step(state: &CenterState, m: &SymMatrix, beta: f64) -> Result<(f64, CenterState)> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidSpec(format!("beta must be in (0,1), got {beta}")));
    }
    let d = state.d.as_slice();
    let s_inv = spd_inverse(state.s.as_matrix()).ok_or(Error::Infeasible(Block::Upper))?;
    let y = state.ym.as_matrix();
    let tr_s: f64 = d.iter().enumerate().map(|(i, di)| di * s_inv[(i, i)]).sum();
    let tr_y: f64 = d.iter().enumerate().map(|(i, di)| di * y[(i, i)]).sum();
    let dk = beta / tr_s.max(tr_y);
    let new_kappa = state.kappa - dk;
    let shifted_s = diag_minus(d, new_kappa, m.as_matrix(), 1.0);
    if shifted_s.cholesky().is_none() {
        return Err(Error::StepTooLarge);
    }
    let z: Vec<f64> = state
        .z()
        .iter()
        .enumerate()
        .map(|(i, zi)| zi + dk * y[(i, i)])
        .collect();
    let shifted = CenterState::from_parts(
        m,
        new_kappa,
        state.d.clone(),
        state.xm.clone(),
        state.ym.clone(),
        &z,
    )
    .map_err(|e| match e {
        Error::Infeasible(_) => Error::StepTooLarge,
        other => other,
    })?;
    Ok((new_kappa, shifted))
}

/// Brings an approximate center back within `target` proximity, falling back
/// to damped Newton centering if the NT steps leave their region.
fn recenter(state: CenterState, m: &SymMatrix, target: f64, cfg: &IpmConfig) -> Result<CenterState> {
    let mut state = state;
    for _ in 0..50 {
        if state.max_proximity() <= target {
            return Ok(state);
        }
        match nt_step(&state, m) {
            Ok(next) => state = next,
            Err(Error::OutOfRegion(_)) | Err(Error::NumericalBreakdown(_)) => {
                log::debug!("NT recentering failed at kappa={}, reinitializing", state.kappa);
                return match center(m, state.kappa, &state.d, cfg) {
                    Ok(s) => Ok(s),
                    Err(Error::NoConvergence { best, .. }) => Ok(*best),
                    Err(e) => Err(e),
                };
            }
            Err(e) => return Err(e),
        }
    }
    Ok(state)
}

fn finish(
    m: &SymMatrix,
    kappa_before: f64,
    d: DiagScaling,
    kappa_certified: f64,
    outer_iterations: usize,
    trace: Vec<(f64, f64)>,
) -> Result<OptResult> {
    let kappa_achieved = cond_2(&scale_sym(m, &d)?)?.kappa;
    Ok(OptResult {
        d_opt: d,
        kappa_before,
        kappa_achieved,
        kappa_certified,
        outer_iterations,
        trace,
    })
}

/// Potential-reduction interior-point method.
///
/// Starts from the center of `kappa = 1.01 cond(M)`, then alternates
/// [`kappa_step`] and NT recentering. Stops once the centrality bound
/// `kappa - kappa* <= 3p / Tr(D S^{-1})` certifies a relative gap below `eps`.
pub fn ipm_optimize(m: &SymMatrix, cfg: &IpmConfig) -> Result<OptResult> {
    cfg.validate()?;
    check_spd(m)?;
    let p = m.dim();
    let cond = cond_2(m).map_err(|_| Error::NotPositiveDefinite)?;
    let kappa_before = cond.kappa;
    if p == 1 {
        let d = DiagScaling::new(vec![m.as_matrix()[(0, 0)]])?;
        return finish(m, kappa_before, d, 1.0, 0, vec![]);
    }

    let kappa0 = 1.01 * cond.kappa;
    let d0 = DiagScaling::uniform(p, 0.995 * cond.lambda_min)?;
    let mut state = match center(m, kappa0, &d0, cfg) {
        Ok(s) => s,
        Err(Error::NoConvergence { best, .. }) => *best,
        Err(e) => return Err(e),
    };
    let mut trace = vec![(state.kappa, potential(m, &state.d, state.kappa)?)];
    let mut outer = 0;
    while outer < cfg.max_outer {
        let mut beta = cfg.beta;
        let mut step = None;
        for _ in 0..=20 {
            match kappa_step(&state, m, beta) {
                Ok(v) => {
                    step = Some(v);
                    break;
                }
                Err(Error::StepTooLarge) => beta *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((new_kappa, shifted)) = step else {
            log::debug!("kappa step rejected after 20 halvings at kappa={}", state.kappa);
            break;
        };
        let dk = state.kappa - new_kappa;
        let gap_bound = 3.0 * p as f64 * dk / beta;
        if gap_bound < cfg.eps * state.kappa {
            break;
        }
        state = recenter(shifted, m, cfg.beta, cfg)?;
        outer += 1;
        let pot = potential(m, &state.d, state.kappa)?;
        log::debug!(
            "ipm outer={outer} kappa={:.10} potential={pot:.6} delta={:.3e}",
            state.kappa,
            state.max_proximity()
        );
        trace.push((state.kappa, pot));
    }
    let kappa_certified = state.kappa;
    finish(m, kappa_before, state.d, kappa_certified, outer, trace)
}

/// Feasibility of `{D : D <= M <= kappa D}` with strict margins.
///
/// From each start (the warm start, then a uniform `D`), maximizes the relaxed
/// potential `log det(M - D) + log det(kappa D - M + t I) + log det D` by damped
/// Newton for a slack `t`, then shrinks `t` by 90% of
/// `lambda_min(kappa D - M + t I)`. Feasible once both slacks clear
/// `1e-10 * lambda_max(M)`; infeasible when the slack stalls on every start.
pub fn feasibility(
    m: &SymMatrix,
    kappa: f64,
    warm: Option<&DiagScaling>,
    cfg: &IpmConfig,
) -> Feasibility {
    let p = m.dim();
    let (lmin, lmax) = linalg::extreme_eigenvalues(m.as_matrix());
    if !(lmin > 0.0) || !(kappa > 0.0) {
        return Feasibility::Infeasible;
    }
    let margin = 1e-10 * lmax;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm.filter(|w| w.len() == p) {
        starts.push(w.as_slice().to_vec());
    }
    starts.push(vec![0.995 * lmin; p]);
    for start in starts {
        if let Some(d) = relaxed_search(m.as_matrix(), kappa, start, margin, lmax, cfg) {
            if let Ok(d) = DiagScaling::new(d) {
                return Feasibility::Feasible(d);
            }
        }
    }
    Feasibility::Infeasible
}

fn relaxed_search(
    m: &DMatrix<f64>,
    kappa: f64,
    mut d: Vec<f64>,
    margin: f64,
    lmax: f64,
    cfg: &IpmConfig,
) -> Option<Vec<f64>> {
    // pull d inside M - D > 0
    let mut tries = 0;
    while min_eigenvalue(&diag_minus(&d, -1.0, m, -1.0)) <= margin {
        d.iter_mut().for_each(|v| *v *= 0.5);
        tries += 1;
        if tries > 60 {
            return None;
        }
    }
    let upper_gap = |d: &[f64]| min_eigenvalue(&diag_minus(d, kappa, m, 1.0));
    let lower_gap = |d: &[f64]| min_eigenvalue(&diag_minus(d, -1.0, m, -1.0));
    let mu = upper_gap(&d);
    if mu >= margin {
        return Some(d);
    }
    let mut t = -mu + 0.1 * lmax;
    for outer in 0..cfg.max_newton {
        match newton_ascent(m, d.clone(), kappa, t, 50, |_, _, dec| dec <= 1e-12) {
            Ok(NewtonOutcome::Converged(nd)) | Ok(NewtonOutcome::Stalled { d: nd, .. }) => d = nd,
            Err(_) => return None,
        }
        let mu = upper_gap(&d);
        if mu >= margin && lower_gap(&d) >= margin {
            log::trace!("feasible at kappa={kappa} after {outer} slack updates");
            return Some(d);
        }
        let width = mu + t;
        if !(0.9 * width > 1e-13 * lmax * kappa) {
            return None;
        }
        t -= 0.9 * width;
    }
    None
}

/// Bisection on `kappa` over `[1, cond(M)]` using [`feasibility`], keeping the
/// last feasible `D`. Stops when `(hi - lo) / hi < eps`.
pub fn bisect_optimize(m: &SymMatrix, eps: f64, cfg: &IpmConfig) -> Result<OptResult> {
    cfg.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidSpec(format!("eps must be positive, got {eps}")));
    }
    check_spd(m)?;
    let p = m.dim();
    let cond = cond_2(m).map_err(|_| Error::NotPositiveDefinite)?;
    let kappa_before = cond.kappa;
    if p == 1 {
        let d = DiagScaling::new(vec![m.as_matrix()[(0, 0)]])?;
        return finish(m, kappa_before, d, 1.0, 0, vec![]);
    }
    // uniform 0.995 * lambda_min is strictly feasible just above cond(M)
    let mut hi = 1.01 * cond.kappa;
    let mut best = DiagScaling::uniform(p, 0.995 * cond.lambda_min)?;
    if let Feasibility::Feasible(d) = feasibility(m, cond.kappa, Some(&best), cfg) {
        hi = cond.kappa;
        best = d;
    }
    let mut lo = 1.0_f64;
    let mut trace = vec![(hi, potential(m, &best, hi)?)];
    let mut iterations = 0;
    while (hi - lo) / hi >= eps && iterations < cfg.max_outer {
        let mid = 0.5 * (lo + hi);
        match feasibility(m, mid, Some(&best), cfg) {
            Feasibility::Feasible(d) => {
                hi = mid;
                trace.push((mid, potential(m, &d, mid)?));
                best = d;
            }
            Feasibility::Infeasible => lo = mid,
        }
        iterations += 1;
        log::debug!("bisect it={iterations} lo={lo:.10} hi={hi:.10}");
    }
    finish(m, kappa_before, best, hi, iterations, trace)
}

/// Lower bound on the condition number reduction from Jacobi scaling of an
/// `alpha`-dominant correlation structure.
pub fn dominance_ratio_bound(s: &SymMatrix) -> Result<RatioBound> {
    check_spd(s)?;
    let (corr, d) = linalg::corr_from_cov(s)?;
    let alpha = dominance(&corr).alpha;
    let lhs = cond_2(s)?.kappa / cond_2(&corr)?.kappa;
    let dv = d.as_slice();
    let dmax = dv.iter().copied().fold(f64::MIN, f64::max);
    let dmin = dv.iter().copied().fold(f64::MAX, f64::min);
    let factor = if alpha.is_infinite() {
        1.0
    } else {
        ((alpha - 1.0) / (alpha + 1.0)).powi(2)
    };
    let rhs = factor * (dmax / dmin) / s.dim() as f64;
    Ok(RatioBound { lhs, rhs, alpha })
}
