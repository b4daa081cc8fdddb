use std::path::Path;
use std::process::{Command, Output};

use dpx_core::io::read_matrix;
use dpx_core::linalg::SymMatrix;
use dpx_core::optimal::{ipm_optimize, IpmConfig};
use dpx_core::randomlab::{gen_cov, CovSpec};

fn dpx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpx")).args(args).current_dir(dir).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn gen_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpx(dir.path(), &["gen", "--kind", "spd-random", "--p", "4", "--target-cond", "30", "--seed", "9", "--out", "m.txt"]);
    assert!(o.status.success());
    let m = read_matrix(&dir.path().join("m.txt")).unwrap();
    assert_eq!(&m, gen_cov(&CovSpec::spd_random(4, 30.0, 9)).unwrap().as_matrix());
}

#[test]
fn precond_round_trips_through_library() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dpx(dir.path(), &["gen", "--p", "5", "--seed", "1", "--out", "m.txt"]).status.success());
    let o = dpx(dir.path(), &["precond", "--input", "m.txt", "--out", "d.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("d.json"));
    let m = SymMatrix::new(read_matrix(&dir.path().join("m.txt")).unwrap()).unwrap();
    let r = ipm_optimize(&m, &IpmConfig::default()).unwrap();
    let d: Vec<f64> = v["d"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(d, r.d_opt.as_slice());
    assert_eq!(v["kappa_after"].as_f64().unwrap(), r.kappa_achieved);
    assert_eq!(v["config"]["command"], "precond");
}

#[test]
fn cond_reports_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.txt"), "2 2\n4 0\n0 0.5\n").unwrap();
    let o = dpx(dir.path(), &["cond", "--input", "m.txt"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["kappa"].as_f64().unwrap(), 8.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dpx(dir.path(), &["cond", "--input", "nope.txt"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.txt"), "2 2\n1 x\n0 1\n").unwrap();
    assert_eq!(dpx(dir.path(), &["cond", "--input", "bad.txt"]).status.code(), Some(2));
    std::fs::write(dir.path().join("indef.txt"), "2 2\n1 2\n2 1\n").unwrap();
    let o = dpx(dir.path(), &["precond", "--input", "indef.txt", "--out", "d.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NotPositiveDefinite"));
    assert!(!dir.path().join("d.json").exists());
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["bench", "--n", "150", "--p", "4", "--seeds", "2", "--strategies", "none,optimal,adaptive", "--out"];
    for out in ["a.csv", "b.csv"] {
        let mut a = args.to_vec();
        a.push(out);
        assert!(dpx(dir.path(), &a).status.success());
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    let header = String::from_utf8(read("a.csv")).unwrap();
    assert!(header.starts_with("strategy,n,p,seed,kappa_effective,iterations,converged\n"));
}
