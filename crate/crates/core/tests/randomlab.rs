use dpx_core::linalg::{cond_2, corr_from_cov, dominance, SymMatrix};
use dpx_core::optimal::dominance_ratio_bound;
use dpx_core::randomlab::{
    concentration_sweep, concentration_trial, concentration_trial_scaled, gen_cov, sample_rows,
    sample_rows_with, CovSpec, RowDist,
};

#[test]
fn sample_moments_converge() {
    let n = 100_000;
    let p = 3;
    let x = sample_rows(n, &SymMatrix::identity(p), &[0.0; 3], 11).unwrap();
    let m = x.as_matrix();
    let tol = 5.0 / (n as f64).sqrt();
    for j in 0..p {
        let mean = m.column(j).sum() / n as f64;
        assert!(mean.abs() < tol, "mean {mean}");
    }
    for a in 0..p {
        for b in 0..p {
            let c = m.column(a).dot(&m.column(b)) / n as f64;
            let target = if a == b { 1.0 } else { 0.0 };
            assert!((c - target).abs() < tol, "cov[{a},{b}] = {c}");
        }
    }
}

#[test]
fn uniform_rows_have_unit_variance() {
    let n = 100_000;
    let x = sample_rows_with(RowDist::Uniform, n, &SymMatrix::identity(2), &[1.0, -1.0], 3).unwrap();
    let m = x.as_matrix();
    let tol = 5.0 / (n as f64).sqrt();
    for (j, mu) in [1.0, -1.0].into_iter().enumerate() {
        let mean = m.column(j).sum() / n as f64;
        let var = m.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < tol);
        assert!((var - 1.0).abs() < tol);
        assert!(m.column(j).iter().all(|v| (v - mu).abs() <= 3f64.sqrt() + 1e-12));
    }
}

#[test]
fn table2_like_preset_produces_worse_correlation() {
    let hits = (0..100)
        .filter(|&seed| {
            let s = gen_cov(&CovSpec::table2_like(4, seed)).unwrap();
            let (corr, _) = corr_from_cov(&s).unwrap();
            cond_2(&corr).unwrap().kappa > cond_2(&s).unwrap().kappa
        })
        .count();
    assert!(hits >= 1, "no draw with cond(corr) > cond(sigma)");
}

#[test]
fn dominant_draws_satisfy_ratio_bound() {
    for seed in 0..100 {
        let alpha = 1.1 + (seed % 10) as f64;
        let s = gen_cov(&CovSpec::dominant(5, 10f64.powi(1 + (seed % 3) as i32), alpha, seed)).unwrap();
        let (corr, _) = corr_from_cov(&s).unwrap();
        assert!(dominance(&corr).alpha >= alpha);
        let b = dominance_ratio_bound(&s).unwrap();
        assert!(b.applies() && b.holds(), "seed {seed}: {b:?}");
    }
}

#[test]
fn trial_is_deterministic_and_divisor_invariant() {
    let s = gen_cov(&CovSpec::spd_random(5, 50.0, 2)).unwrap();
    let a = concentration_trial(200, &s, 9).unwrap();
    let b = concentration_trial(200, &s, 9).unwrap();
    assert_eq!(a, b);
    let c = concentration_trial_scaled(200, &s, 9, 199.0).unwrap();
    assert!((a.gap - c.gap).abs() <= 1e-9 * (1.0 + a.gap));
}

#[test]
fn sweep_single_trial_matches_trial() {
    let s = gen_cov(&CovSpec::spd_random(4, 10.0, 1)).unwrap();
    let rows = concentration_sweep(&s, &[50, 100], 1, 5).unwrap();
    for r in &rows {
        let t = concentration_trial(r.n, &s, 5).unwrap();
        assert_eq!(r.median_gap, t.gap);
        assert_eq!(r.q90_gap, t.gap);
    }
}

#[test]
fn gaps_shrink_with_n_for_diagonal_sigma() {
    let s = SymMatrix::from_diagonal(&[1.0, 4.0, 9.0, 0.25]);
    let rows = concentration_sweep(&s, &[100, 1000, 10_000], 30, 0).unwrap();
    assert!(rows.windows(2).all(|w| w[1].median_gap < w[0].median_gap), "{rows:?}");
}

#[test]
fn identity_sigma_gives_equal_ratios() {
    let rows = concentration_sweep(&SymMatrix::identity(5), &[500, 2000], 10, 3).unwrap();
    for r in rows {
        assert!(r.median_gap < 0.5, "{r:?}");
    }
}
