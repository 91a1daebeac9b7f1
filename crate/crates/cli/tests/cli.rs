use std::path::Path;
use std::process::{Command, Output};

fn rwhec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwhec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parses report.csv into (header, rows).
fn read_report(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn simulate_then_calibrate_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let out = dir.path().join("r");
    let o = rwhec(&["simulate", "--eta", "0", "--seed", "1", "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = data.join("manifest.txt");
    let o = rwhec(&[
        "calibrate",
        "--manifest",
        s(&manifest),
        "--methods",
        "c1-sim",
        "--rotations",
        "euler",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_report(&out.join("report.csv"));
    assert_eq!(rows.len(), 1);
    let e_c: f64 = rows[0][column(&h, "e_c")].parse().unwrap();
    assert!(e_c < 1e-10, "e_c = {e_c}");
    assert_eq!(rows[0][column(&h, "status")], "ok");
    assert!(out.join("c1-sim_euler_X.txt").exists());
    assert!(out.join("c1-sim_euler_Z0.txt").exists());
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = rwhec(&[
        "sweep",
        "--solvers",
        "c1-sim,c2-sim",
        "--seed",
        "7",
        "--trials",
        "2",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(r.records().count(), 19 * 2 * 2 * 3);
    let mut m = csv::Reader::from_path(dir.path().join("sweep_means.csv")).unwrap();
    assert_eq!(m.records().count(), 19 * 2 * 3);
}

#[test]
fn reprojection_method_without_observations_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rwhec(&["simulate", "--seed", "2", "--out", s(dir.path())]);
    assert!(o.status.success());
    let o = rwhec(&[
        "calibrate",
        "--manifest",
        s(&dir.path().join("manifest.txt")),
        "--methods",
        "rp2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("observations_file"), "{err}");
    assert!(err.contains("intrinsics_file"), "{err}");
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = rwhec(&["calibrate", "--manifest", s(&dir.path().join("nope.txt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.txt"));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(rwhec(&["--bogus"]).status.code(), Some(2));
    assert_eq!(rwhec(&["calibrate"]).status.code(), Some(2));
    assert_eq!(rwhec(&["sweep", "--solvers", "c1-sim,nope"]).status.code(), Some(2));
    assert_eq!(
        rwhec(&["synth-camera", "--board", "6x8", "--out", "x"]).status.code(),
        Some(2)
    );
}

#[test]
fn version_and_help() {
    let o = rwhec(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
    let o = rwhec(&["--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for sub in ["simulate", "sweep", "calibrate", "evaluate", "synth-camera"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn camera_pipeline_estimates_poses_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cam");
    let out = dir.path().join("r");
    let o = rwhec(&[
        "synth-camera",
        "--poses",
        "12",
        "--seed",
        "3",
        "--no-a-files",
        "--out",
        s(&data),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!data.join("A_0000.txt").exists());
    let manifest = data.join("manifest.txt");
    let o = rwhec(&[
        "calibrate",
        "--manifest",
        s(&manifest),
        "--methods",
        "c2-sim,rp1",
        "--rotations",
        "quaternion",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_report(&out.join("report.csv"));
    assert_eq!(rows.len(), 2);
    let rp1 = &rows[1];
    assert_eq!(rp1[0], "rp1");
    let rrmse: f64 = rp1[column(&h, "rrmse_px_0")].parse().unwrap();
    assert!(rrmse < 1e-6, "rrmse = {rrmse}");

    let o = rwhec(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--x",
        s(&out.join("rp1_quaternion_X.txt")),
        "--z",
        s(&out.join("rp1_quaternion_Z0.txt")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_report(&out.join("evaluation.csv"));
    assert_eq!(rows.len(), 1);
    let rrmse: f64 = rows[0][column(&h, "rrmse_px_0")].parse().unwrap();
    assert!(rrmse < 1e-6);
}

#[test]
fn simulate_rejects_out_of_range_noise() {
    let dir = tempfile::tempdir().unwrap();
    let o = rwhec(&["simulate", "--eta", "0.5", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("eta"));
}
