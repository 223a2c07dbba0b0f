use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rdt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdthreshold"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn steady_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = rdt(&["steady", "--a", "0.3", "--out", &out_arg(d.path())]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let line = String::from_utf8(o.stdout).unwrap();
        assert!(line.contains("\"beta_star\": 0.4779365"), "{line}");
    }
    for name in ["W.csv", "phi.csv", "steady_report.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let report = fs::read_to_string(a.path().join("steady_report.csv")).unwrap();
    let last = report.lines().last().unwrap();
    let lambda: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(lambda < 0.0);
    let manifest = fs::read_to_string(a.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("W.csv sha256 = "));
    assert!(manifest.contains("wall_clock_seconds"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = rdt(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_values_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    let o = rdt(&["steady", "--set", "grid.nope=3", "--out", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = rdt(&["steady", "--a", "0.7", "--out", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = rdt(&["threshold", "--family", "two_bump", "--out", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_datum_dies_at_once() {
    let d = tempfile::tempdir().unwrap();
    let o = rdt(&["simulate", "--u0", "zero", "--out", &out_arg(d.path())]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("extinction at t = 0"));
}

#[test]
fn precedence_is_flag_over_file_over_default() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    fs::write(&cfg, "nonlinearity.a = 0.25\ngrid.n = 801\n").unwrap();
    let o = rdt(&[
        "steady",
        "--config",
        cfg.to_str().unwrap(),
        "--a",
        "0.2",
        "--out",
        &out_arg(d.path()),
    ]);
    assert!(o.status.success());
    let w = fs::read_to_string(d.path().join("W.csv")).unwrap();
    assert!(w.contains("# nonlinearity.a = 0.2 (cli)"));
    assert!(w.contains("# grid.n = 801 (file)"));
    assert!(w.contains("# grid.x_max = 40 (default)"));
}

#[test]
fn threshold_trajectory_feeds_the_adjoint() {
    let d = tempfile::tempdir().unwrap();
    let small = ["--set", "grid.x_max=20", "--set", "grid.n=401", "--out", &out_arg(d.path())];
    let mut args = vec!["threshold", "--tol", "1e-9", "--trajectory"];
    args.extend(small);
    let o = rdt(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = d.path().join("threshold_trajectory.csv");
    let mut args = vec!["adjoint", "--trajectory", traj.to_str().unwrap()];
    args.extend(small);
    let o = rdt(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p0 = fs::read_to_string(d.path().join("p0.csv")).unwrap();
    assert!(p0.contains("threshold_trajectory.csv sha256 = "));
    // A trajectory from another grid is refused.
    let mut args = vec!["adjoint", "--trajectory", traj.to_str().unwrap()];
    args.extend(["--out", small[5]]);
    assert_eq!(rdt(&args).status.code(), Some(2));
}
