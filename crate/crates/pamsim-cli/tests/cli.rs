//! End-to-end tests of the command-line interface: output file formats,
//! exit codes per error category, determinism, and the shipped default
//! configuration file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pamsim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("test.cfg");
    fs::write(&path, text).unwrap();
    path
}

const TELEMETRY_HEADER: &str = "t,theta_x,theta_y,omega_x,omega_y,p1,p2,p3,\
    meas_theta_x,meas_theta_y,ref_theta_x,ref_theta_y,ref_f3,\
    q_cmd_1,q_cmd_2,q_cmd_3,v_1,v_2,v_3,force_1,force_2,force_3,\
    err_theta_x,err_theta_y,err_f3,saturated_1,saturated_2,saturated_3,\
    angle_violation,force_violation";

#[test]
fn simulate_writes_telemetry_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let out = run(&[
        "simulate",
        "--mode",
        "flatness-pi",
        "--duration",
        "0.05",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let telemetry = fs::read_to_string(out_dir.join("telemetry-flatness-pi.csv")).unwrap();
    let mut lines = telemetry.lines();
    assert_eq!(
        lines.next().unwrap().replace(' ', ""),
        TELEMETRY_HEADER.replace(' ', ""),
        "header row"
    );
    let units = lines.next().unwrap();
    assert!(units.starts_with("# units:"), "units comment, got {units}");
    let columns = TELEMETRY_HEADER.split(',').count();
    assert_eq!(units.trim_start_matches("# units:").split(',').count(), columns);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50, "one row per control period");
    for row in &rows {
        assert_eq!(row.split(',').count(), columns, "row width: {row}");
    }

    let summary = fs::read_to_string(out_dir.join("summary-flatness-pi.txt")).unwrap();
    for key in [
        "mode",
        "seed",
        "duration_s",
        "periods",
        "metrics_defined",
        "rms_theta_x_deg",
        "rms_theta_y_deg",
        "rms_f3_n",
        "saturation_count",
        "violation_count",
    ] {
        assert!(
            summary.lines().any(|l| l.starts_with(&format!("{key} = "))),
            "summary key {key} missing in:\n{summary}"
        );
    }
    assert!(stdout(&out).contains("rms_theta_x_deg"));
    // no stray temporaries from the atomic-write path
    assert!(!out_dir.join("telemetry-flatness-pi.tmp").exists());
}

#[test]
fn mode_all_writes_every_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("all");
    let out = run(&[
        "simulate",
        "--mode",
        "all",
        "--jobs",
        "3",
        "--duration",
        "0.02",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for mode in ["flatness-pi", "pi-only", "flatness-only"] {
        assert!(out_dir.join(format!("telemetry-{mode}.csv")).exists());
        assert!(out_dir.join(format!("summary-{mode}.txt")).exists());
    }
}

#[test]
fn malformed_config_exits_3_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "[muscle]\nno_such_parameter = 1\n");
    let out_dir = dir.path().join("results");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "simulate",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("no_such_parameter"));
    assert!(!out_dir.exists(), "no partial outputs on parse failure");
}

#[test]
fn invalid_model_parameter_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // A weave angle this steep makes the force gain negative over the
    // operating range, which the model validation rejects.
    let cfg = write_cfg(dir.path(), "[muscle]\ntheta0_deg = 89\n");
    let out = run(&["--config", cfg.to_str().unwrap(), "verify"]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let out = run(&["simulate", "--mode", "bang-bang"]);
    assert_eq!(out.status.code(), Some(2), "clap usage error");
}

#[test]
fn missing_config_file_exits_6() {
    let out = run(&["--config", "/nonexistent/path.cfg", "verify"]);
    assert_eq!(out.status.code(), Some(6), "stderr: {}", stderr(&out));
}

#[test]
fn sweep_determinant_grid_and_center_value() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep-determinant",
        "--grid-n",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("min_m = "));

    let csv = fs::read_to_string(out_dir.join("determinant-sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "theta_x_deg,theta_y_deg,m");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9, "3x3 grid");
    let center = rows
        .iter()
        .find(|r| r[0] == 0.0 && r[1] == 0.0)
        .expect("grid contains the level pose");
    assert!((center[2] - 3.0_f64.sqrt() / 2.0).abs() <= 1e-12);
    // every tabulated m stays positive over the tilt range
    assert!(rows.iter().all(|r| r[2] > 0.0));
}

#[test]
fn sweep_determinant_underscore_alias() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep_determinant",
        "--grid-n",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
}

#[test]
fn verify_reports_pass_per_suite() {
    let out = run(&["verify", "--grid-n", "41"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let pass_lines = text.lines().filter(|l| l.contains(": PASS")).count();
    assert!(pass_lines >= 5, "expected one PASS line per suite:\n{text}");
    assert!(!text.contains(": FAIL"), "unexpected failure:\n{text}");
}

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../config/default.cfg");
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("builtin");
    let out_b = dir.path().join("shipped");
    let a = run(&[
        "simulate",
        "--duration",
        "0.05",
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(a.status.success(), "stderr: {}", stderr(&a));
    let b = run(&[
        "--config",
        shipped.to_str().unwrap(),
        "simulate",
        "--duration",
        "0.05",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(b.status.success(), "stderr: {}", stderr(&b));
    let t_a = fs::read_to_string(out_a.join("telemetry-flatness-pi.csv")).unwrap();
    let t_b = fs::read_to_string(out_b.join("telemetry-flatness-pi.csv")).unwrap();
    assert_eq!(t_a, t_b, "shipped default.cfg drifted from built-in defaults");
}

#[test]
fn telemetry_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    // pressure noise makes the seed actually reach the telemetry
    let cfg = write_cfg(dir.path(), "[sensors]\npressure_noise_std = 50\n");
    let run_with = |seed: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "simulate",
            "--mode",
            "flatness-pi",
            "--seed",
            seed,
            "--duration",
            "0.03",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        fs::read_to_string(out_dir.join("telemetry-flatness-pi.csv")).unwrap()
    };
    let first = run_with("7", "a");
    let second = run_with("7", "b");
    let other = run_with("8", "c");
    assert_eq!(first, second, "same seed must be bit-identical");
    assert_ne!(first, other, "different seed must change noisy telemetry");
}

#[test]
fn valve_table_config_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    // Pressure-independent linear valve: q = 1e-3 (v - 5). Monotone in v at
    // every pressure, so it passes the inversion checks.
    let table = "\
# degrees: 1 0
0,0,-5e-3
1,0,1e-3
";
    let table_path = dir.path().join("valve.csv");
    fs::write(&table_path, table).unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[valve]\nkind = table\ntable_path = valve.csv\n",
    );
    let out_dir = dir.path().join("res");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "simulate",
        "--mode",
        "flatness-only",
        "--duration",
        "0.02",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(out_dir.join("telemetry-flatness-only.csv").exists());
}
