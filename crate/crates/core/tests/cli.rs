use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tiqf::geom::{Pose, Quaternion, Vec3};
use tiqf::harness::default_mesh;
use tiqf::mesh::write_obj;

fn tiqf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiqf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn exact_touches(pose: &Pose, n: usize) -> String {
    let pts = default_mesh().sample_surface_points(n, 3).unwrap();
    let mut s = String::from("x,y,z\n");
    for p in pts {
        let z = pose.transform_point(&p);
        s.push_str(&format!("{},{},{}\n", z.x, z.y, z.z));
    }
    s
}

#[test]
fn register_recovers_a_small_offset() {
    let dir = tempfile::tempdir().unwrap();
    let gt = Pose {
        rotation: Quaternion::from_euler_xyz(0.05, -0.08, 0.1),
        translation: Vec3::new(0.01, -0.02, 0.015),
    };
    let csv = write(&dir.path().join("m.csv"), &exact_touches(&gt, 15));
    let o = tiqf(&["register", "--measurements", &csv]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("quaternion")).unwrap();
    let q: Vec<&str> = line.split(':').nth(1).unwrap().split_whitespace().collect();
    assert_eq!(q.len(), 4);
    for c in &q {
        assert_eq!(c.split('.').nth(1).unwrap().len(), 9, "{line}");
    }
    let q: Vec<f64> = q.iter().map(|c| c.parse().unwrap()).collect();
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-8);
    let est = Quaternion::new(q[0], q[1], q[2], q[3]);
    let err = tiqf::geom::rotation_error_deg(&est, &gt.rotation);
    // Convergence is declared on the per-iteration change, so the estimate
    // stops slightly short of the exact pose.
    assert!(err < 0.1, "{err} {out}");
    let residual: f64 = out
        .lines()
        .find(|l| l.starts_with("surface residual"))
        .and_then(|l| l.split(':').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(residual < 1e-4, "{out}");
}

#[test]
fn register_with_mesh_file_and_initial_pose() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = write(&dir.path().join("egg.obj"), &write_obj(&default_mesh()));
    let gt = Pose {
        rotation: Quaternion::from_euler_xyz(0.3, 0.0, 0.2),
        translation: Vec3::new(0.0, 0.0, 0.02),
    };
    let csv = write(&dir.path().join("m.csv"), &exact_touches(&gt, 20));
    let init = write(
        &dir.path().join("init.toml"),
        "rotation = [0.98, 0.15, 0.0, 0.1]\ntranslation = [0.0, 0.0, 0.0]\n",
    );
    let o = tiqf(&["register", "--mesh", &mesh, "--measurements", &csv, "--init", &init]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("converged:            true"), "{}", stdout(&o));
}

#[test]
fn malformed_measurements_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(&dir.path().join("bad.csv"), "x,y,z\n0,0,0\n0.1,oops,0\n");
    let o = tiqf(&["register", "--measurements", &csv]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), "n_trials = 2\nnoise = 0.1\n");
    let o = tiqf(&["simulate", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise"), "{}", stderr(&o));
    let o = tiqf(&["simulate", "--faces", "4"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tiqf(&["mesh-info", "--mesh", "/nonexistent.obj"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let started = Instant::now();
    let o = tiqf(&["compare", "--trials", "2", "--touches", "5", "--seed", "7", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(started.elapsed() < Duration::from_secs(30));
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 5 * 2);
    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert!(trials.lines().skip(1).any(|l| l.contains(",random,")));
    assert!(trials.lines().skip(1).any(|l| l.contains(",active,")));
    assert!(stdout(&o).contains("paired: active vs random"));

    // The manifest reproduces the run.
    let again = dir.path().join("again");
    let manifest = out.join("manifest.toml");
    let o = tiqf(&["compare", "--config", manifest.to_str().unwrap(), "--out-dir", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trials.csv", "aggregate.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn simulate_single_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiqf(&[
        "simulate",
        "--strategy",
        "random",
        "--trials",
        "3",
        "--touches",
        "4",
        "--faces",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 4);
    assert!(agg.lines().skip(1).all(|l| l.starts_with("random,")));
}

#[test]
fn bench_actions_reports_growing_times() {
    let o = tiqf(&["bench-actions", "--counts", "10,1000", "--contacts", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let times: Vec<f64> = stdout(&o)
        .lines()
        .filter_map(|l| l.split_whitespace().nth(4)?.parse().ok())
        .collect();
    assert_eq!(times.len(), 2, "{}", stdout(&o));
    assert!(times[0] > 0.0);
    assert!(times[1] > times[0]);
}

#[test]
fn mesh_info_of_default_mesh() {
    let o = tiqf(&["mesh-info"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("faces:        912"), "{}", stdout(&o));
}
