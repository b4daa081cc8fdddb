mod common;

use dpx_core::linalg::{cond_2, SymMatrix};
use dpx_core::optimal::{
    bisect_optimize, center, dominance_ratio_bound, feasibility, ipm_optimize, kappa_step, nt_step, potential,
    Feasibility, IpmConfig,
};
use dpx_core::precondition::{jacobi_precond, scale_sym, DiagScaling};
use dpx_core::randomlab::{gen_cov, CovSpec};
use nalgebra::DMatrix;
use rand::Rng;

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn instances() -> impl Iterator<Item = SymMatrix> {
    (0..12u64).map(|s| gen_cov(&CovSpec::spd_random(2 + s as usize % 6, [10.0, 300.0, 3000.0][s as usize % 3], s)).unwrap())
}

#[test]
fn solution_is_sandwiched() {
    let cfg = IpmConfig::default();
    for m in instances() {
        let r = ipm_optimize(&m, &cfg).unwrap();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(r.d_opt.as_slice()));
        let scale = m.as_matrix().amax();
        assert!(min_eig(&(m.as_matrix() - &d)) >= -1e-9 * scale);
        assert!(min_eig(&(&d * r.kappa_certified - m.as_matrix())) >= -1e-9 * scale);
        assert!(r.kappa_achieved <= r.kappa_certified * (1.0 + 1e-9));
        assert!(r.kappa_achieved <= r.kappa_before * (1.0 + 1e-9));
        let achieved = cond_2(&scale_sym(&m, &r.d_opt).unwrap()).unwrap().kappa;
        assert!((achieved - r.kappa_achieved).abs() <= 1e-9 * achieved);
    }
}

#[test]
fn jacobi_never_beats_optimal() {
    let cfg = IpmConfig::default();
    for m in instances() {
        let r = ipm_optimize(&m, &cfg).unwrap();
        let kj = cond_2(&scale_sym(&m, &jacobi_precond(&m).unwrap()).unwrap()).unwrap().kappa;
        assert!(r.kappa_achieved <= kj * (1.0 + 2.0 * cfg.eps), "{} vs {kj}", r.kappa_achieved);
    }
}

#[test]
fn ipm_and_bisection_agree() {
    let cfg = IpmConfig::default();
    for m in instances() {
        let a = ipm_optimize(&m, &cfg).unwrap().kappa_achieved;
        let b = bisect_optimize(&m, cfg.eps, &cfg).unwrap().kappa_achieved;
        assert!((a - b).abs() <= 2.0 * cfg.eps * a.min(b), "{a} vs {b}");
    }
}

#[test]
fn outer_trace_decreases() {
    let m = gen_cov(&CovSpec::spd_random(6, 500.0, 42)).unwrap();
    let cfg = IpmConfig::default();
    for r in [ipm_optimize(&m, &cfg).unwrap(), bisect_optimize(&m, cfg.eps, &cfg).unwrap()] {
        assert!(!r.trace.is_empty());
        assert!(r.trace.windows(2).all(|w| w[1].0 < w[0].0));
    }
}

#[test]
fn diagonal_matrix_is_solved_exactly() {
    let m = SymMatrix::from_diagonal(&[1e-3, 1.0, 1e4]);
    let r = ipm_optimize(&m, &IpmConfig::default()).unwrap();
    assert!(r.kappa_achieved <= 1.0 + 2e-3);
    assert_eq!(r.kappa_before, 1e7);
    let one = ipm_optimize(&SymMatrix::from_diagonal(&[7.0]), &IpmConfig::default()).unwrap();
    assert_eq!((one.d_opt.as_slice(), one.kappa_certified), (&[7.0][..], 1.0));
}

#[test]
fn feasibility_brackets_optimum() {
    let m = gen_cov(&CovSpec::spd_random(4, 200.0, 3)).unwrap();
    let cfg = IpmConfig::default();
    let k = ipm_optimize(&m, &cfg).unwrap().kappa_achieved;
    match feasibility(&m, 1.05 * k, None, &cfg) {
        Feasibility::Feasible(d) => {
            let kd = cond_2(&scale_sym(&m, &d).unwrap()).unwrap().kappa;
            assert!(kd <= 1.05 * k * (1.0 + 1e-9));
        }
        Feasibility::Infeasible => panic!("feasible kappa reported infeasible"),
    }
    assert_eq!(feasibility(&m, 0.95 * k, None, &cfg), Feasibility::Infeasible);
}

#[test]
fn nt_step_contracts_small_sample() {
    let cfg = IpmConfig::default();
    let mut r = common::rng(5);
    let mut checked = 0;
    for seed in 0..30u64 {
        let m = gen_cov(&CovSpec::spd_random(3 + seed as usize % 3, 50.0, seed)).unwrap();
        let kappa = ipm_optimize(&m, &cfg).unwrap().kappa_achieved * r.random_range(1.2..2.0);
        let delta = [0.05, 0.1, 0.2][seed as usize % 3];
        let Some(st) = common::state_with_proximity(&m, kappa, delta, &mut r) else {
            continue;
        };
        let next = nt_step(&st, &m).unwrap();
        assert!(next.max_proximity() <= 0.5 * delta * delta / (1.0 - delta) + 1e-8);
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn kappa_step_keeps_feasibility_and_reduces_kappa() {
    let m = gen_cov(&CovSpec::spd_random(5, 100.0, 11)).unwrap();
    let cfg = IpmConfig::default();
    let lmin = min_eig(m.as_matrix());
    let kappa = 2.0 * cond_2(&m).unwrap().kappa;
    let st = center(&m, kappa, &DiagScaling::uniform(5, 0.9 * lmin).unwrap(), &cfg).unwrap();
    let d = st.d.as_slice();
    let slack = DMatrix::from_fn(5, 5, |i, j| if i == j { kappa * d[i] } else { 0.0 }) - m.as_matrix();
    let inv = slack.try_inverse().unwrap();
    let expected = cfg.beta / (0..5).map(|i| d[i] * inv[(i, i)]).sum::<f64>();
    let (new_kappa, next) = kappa_step(&st, &m, cfg.beta).unwrap();
    assert_eq!(next.kappa, new_kappa);
    assert!(((kappa - new_kappa) - expected).abs() <= 1e-6 * expected);
    assert!(potential(&m, &next.d, next.kappa).is_ok());
}

#[test]
fn ratio_bound_example() {
    let s = gen_cov(&CovSpec::dominant(10, 1e3, 2.0, 0)).unwrap();
    let b = dominance_ratio_bound(&s).unwrap();
    assert!(b.alpha >= 2.0 - 1e-9);
    assert!(b.rhs >= 11.1);
    assert!(b.lhs >= b.rhs, "{b:?}");
}
