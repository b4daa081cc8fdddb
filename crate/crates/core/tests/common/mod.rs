#![allow(dead_code)]

use dpx_core::linalg::SymMatrix;
use dpx_core::optimal::{center, ipm_optimize, CenterState, IpmConfig};
use dpx_core::precondition::DiagScaling;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal(rng);
        }
    }
    m
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let g = gaussian(rng, p, p);
    (&g + g.transpose()) * 0.5
}

/// Extreme eigenvalues (min, max) of a symmetric 3x3 matrix given by its
/// upper triangle `[a00, a01, a02, a11, a12, a22]`, by the trigonometric
/// formula for the roots of the characteristic cubic.
pub fn eig3_extremes(a: [f64; 6]) -> (f64, f64) {
    let [a00, a01, a02, a11, a12, a22] = a;
    let p1 = a01 * a01 + a02 * a02 + a12 * a12;
    let q = (a00 + a11 + a22) / 3.0;
    let (b00, b11, b22) = (a00 - q, a11 - q, a22 - q);
    let p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1;
    if p2 <= 0.0 {
        return (q, q);
    }
    let p = (p2 / 6.0).sqrt();
    let det = b00 * (b11 * b22 - a12 * a12) - a01 * (a01 * b22 - a12 * a02) + a02 * (a01 * a12 - b11 * a02);
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    (lo, hi)
}

/// `cond(D^{-1/2} M D^{-1/2})` for 3x3 `M` with `s_i = d_i^{-1/2}`.
pub fn cond3_scaled(m: &[f64; 6], s: [f64; 3]) -> f64 {
    let b = [
        m[0] * s[0] * s[0],
        m[1] * s[0] * s[1],
        m[2] * s[0] * s[2],
        m[3] * s[1] * s[1],
        m[4] * s[1] * s[2],
        m[5] * s[2] * s[2],
    ];
    let (lo, hi) = eig3_extremes(b);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

pub fn upper3(m: &SymMatrix) -> [f64; 6] {
    let a = m.as_matrix();
    [a[(0, 0)], a[(0, 1)], a[(0, 2)], a[(1, 1)], a[(1, 2)], a[(2, 2)]]
}

/// Minimum of `cond3_scaled` over `d_i = M_ii * 10^{u_i}`, `u_i` on a
/// 200-point grid in `[lo_i, hi_i]`. Returns the minimum and its grid index.
pub fn grid_min3(m: &[f64; 6], lo: [f64; 3], hi: [f64; 3]) -> (f64, [usize; 3]) {
    const N: usize = 200;
    let diag = [m[0], m[3], m[5]];
    let axis = |c: usize| -> Vec<f64> {
        (0..N)
            .map(|i| {
                let u = lo[c] + (hi[c] - lo[c]) * i as f64 / (N - 1) as f64;
                1.0 / (diag[c] * 10f64.powf(u)).sqrt()
            })
            .collect()
    };
    let (s0, s1, s2) = (axis(0), axis(1), axis(2));
    let mut best = (f64::INFINITY, [0; 3]);
    for i in 0..N {
        for j in 0..N {
            for k in 0..N {
                let c = cond3_scaled(m, [s0[i], s1[j], s2[k]]);
                if c < best.0 {
                    best = (c, [i, j, k]);
                }
            }
        }
    }
    best
}

/// Two-level log-grid search: a coarse grid over `[-2, 2]` decades around
/// the diagonal of `M`, then a grid over two coarse cells around the coarse
/// minimizer. Returns the minimum and whether the coarse minimizer sits
/// strictly inside the coarse grid.
pub fn grid_oracle3(m: &SymMatrix) -> (f64, bool) {
    let a = upper3(m);
    let (coarse, idx) = grid_min3(&a, [-2.0; 3], [2.0; 3]);
    let step = 4.0 / 199.0;
    let interior = idx.iter().all(|&i| i > 0 && i < 199);
    let centre: Vec<f64> = idx.iter().map(|&i| -2.0 + step * i as f64).collect();
    let lo = [centre[0] - 2.0 * step, centre[1] - 2.0 * step, centre[2] - 2.0 * step];
    let hi = [centre[0] + 2.0 * step, centre[1] + 2.0 * step, centre[2] + 2.0 * step];
    let (fine, _) = grid_min3(&a, lo, hi);
    (coarse.min(fine), interior)
}

fn inv_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = a.clone().symmetric_eigen();
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| e.eigenvectors[(i, j)] / e.eigenvalues[j].sqrt()) * e.eigenvectors.transpose()
}

fn unit_sym(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let e = random_symmetric(rng, p);
    let n = e.norm();
    e / n
}

/// Perturbed primal-dual state around the exact center of `{D <= M <= kappa D}`
/// whose largest proximity equals `delta` (to 1e-9).
pub fn state_with_proximity(
    m: &SymMatrix,
    kappa: f64,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Option<CenterState> {
    let p = m.dim();
    let cfg = IpmConfig::default();
    let opt = ipm_optimize(m, &cfg).ok()?;
    if kappa <= opt.kappa_achieved {
        return None;
    }
    let guess = opt.d_opt.scaled(0.5 * (1.0 + opt.kappa_achieved / kappa)).ok()?;
    let d0 = center(m, kappa, &guess, &cfg).ok()?.d;
    let e = unit_sym(rng, p);
    let f = unit_sym(rng, p);
    let u = DVector::from_fn(p, |_, _| normal(rng));
    let u = &u / u.norm();
    let build = |t: f64| -> Option<CenterState> {
        let d: Vec<f64> = (0..p).map(|i| d0.as_slice()[i] * (0.5 * t * u[i]).exp()).collect();
        let dm = DMatrix::from_diagonal(&DVector::from_column_slice(&d));
        let r = m.as_matrix() - &dm;
        let s = &dm * kappa - m.as_matrix();
        let r_ih = inv_sqrt(&r);
        let s_ih = inv_sqrt(&s);
        let eye = DMatrix::identity(p, p);
        let x = &r_ih * (&eye + &e * t) * &r_ih;
        let y = &s_ih * (&eye + &f * t) * &s_ih;
        let z: Vec<f64> = (0..p).map(|i| x[(i, i)] - kappa * y[(i, i)]).collect();
        if z.iter().any(|&v| v <= 0.0) {
            return None;
        }
        CenterState::from_parts(
            m,
            kappa,
            DiagScaling::new(d).ok()?,
            SymMatrix::symmetrize(x),
            SymMatrix::symmetrize(y),
            &z,
        )
        .ok()
    };
    let (mut lo, mut hi) = (0.0, delta);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let st = build(mid)?;
        if st.max_proximity() < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let st = build(hi)?;
    if (st.max_proximity() - delta).abs() < 1e-9 {
        Some(st)
    } else {
        None
    }
}
