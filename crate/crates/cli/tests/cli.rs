use std::path::Path;
use std::process::{Command, Output};

fn grinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grinn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = grinn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

fn files(dir: &Path, prefix: &str) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn fd_run_writes_one_snapshot_at_the_requested_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = out.to_str().unwrap();
    ok(&["run", "--case", "3", "--solver", "fd", "--times", "8", "--grid-points", "128", "--out", o]);
    let snaps = files(&out, "snapshot_");
    let names: Vec<&str> = snaps.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["snapshot_fd_t8.csv", "snapshot_fd_t8.meta.toml"]);
    assert!(out.join("manifest.toml").exists());
    let csv = String::from_utf8(snaps[0].1.clone()).unwrap();
    assert_eq!(csv.lines().next(), Some("x,t,rho,vx,phi"));
    assert_eq!(csv.lines().count(), 129);
}

#[test]
fn replay_reproduces_snapshots_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    ok(&[
        "run", "--case", "1", "--solver", "grinn", "--hidden", "6,6", "--n-interior", "60", "--n-boundary", "8",
        "--n-initial", "20", "--adam-epochs", "5", "--lbfgs-iterations", "5", "--snapshot-points", "16", "--times",
        "0.5,1", "--out", first.to_str().unwrap(),
    ]);
    ok(&["replay", first.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    let a = files(&first, "snapshot_");
    assert_eq!(a.len(), 4);
    assert_eq!(a, files(&second, "snapshot_"));
    assert_eq!(std::fs::read(first.join("model.ckpt")).unwrap(), std::fs::read(second.join("model.ckpt")).unwrap());
}

#[test]
fn compare_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    ok(&[
        "compare", "--case", "1", "--solvers", "fd,lt", "--times", "0.5,1.5", "--grid-points", "200", "--cut-points",
        "50", "--out", out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out.join("mismatch.txt")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    // rho, vx, phi at two times
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("0.5 rho density fd lt 50 "));
    assert!(out.join("mismatch_points.txt").exists());
}

#[test]
fn extrapolate_and_scale_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    ok(&[
        "extrapolate", "--case", "1", "--train-to", "1", "--predict-to", "3", "--hidden", "4", "--n-interior", "40",
        "--n-boundary", "5", "--n-initial", "10", "--adam-epochs", "3", "--lbfgs-iterations", "3", "--grid-points",
        "64", "--out", out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out.join("extrapolation.txt")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("3 1 ")));

    let out = dir.path().join("s");
    ok(&[
        "scale", "--mode", "time", "--reps", "1", "--fd-grid", "16", "--out", out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out.join("scaling.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("fd time")).count(), 4);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "case = \"case2\"\n[fd]\ncourant = 0.6\ngrid_points = 100\n").unwrap();
    let out = dir.path().join("r");
    ok(&[
        "run", "--config", cfg.to_str().unwrap(), "--solver", "fd", "--grid-points", "64", "--times", "0.5", "--out",
        out.to_str().unwrap(),
    ]);
    let m = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    let m: toml::Table = m.parse().unwrap();
    let fd = &m["config"]["fd"];
    assert_eq!(fd["courant"].as_float(), Some(0.6));
    assert_eq!(fd["grid_points"].as_integer(), Some(64));
    assert_eq!(m["config"]["case"].as_str(), Some("case2"));
}

#[test]
fn failures_emit_a_json_error_line() {
    let out = grinn(&["run", "--case", "1", "--solver", "fd", "--courant", "1.5", "--times", "1"]);
    let e = error_line(&out);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("Courant"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[fd]\nspeed = 2\n").unwrap();
    let out = grinn(&["run", "--config", cfg.to_str().unwrap(), "--times", "1"]);
    assert!(error_line(&out)["message"].as_str().unwrap().contains("fd.speed"));

    let out = grinn(&[
        "run", "--case", "1", "--solver", "fd", "--grid-points", "32", "--times", "9", "--out",
        dir.path().join("late").to_str().unwrap(),
    ]);
    assert_eq!(error_line(&out)["error"], "fd");
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_grinn"))
        .args(["run", "--case", "1", "--solver", "lt", "--snapshot-points", "8", "--times", "0"])
        .env("GRINN_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let printed = String::from_utf8(out.stdout).unwrap();
    let run_dir = Path::new(printed.trim());
    assert!(run_dir.starts_with(dir.path()));
    assert_eq!(files(run_dir, "snapshot_lt_t0").len(), 2);
}
