//! End-to-end checks of the binary: exit codes, config handling, artifact
//! shape, and rerun determinism.

use std::path::Path;
use std::process::Command;

fn crlab(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_crlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn passing_scenario_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = crlab(&["foliation"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("CHECK four_separatrices: PASS"));
    assert!(dir.path().join("separatrices.csv").exists());
    assert!(dir
        .path()
        .join("foliation_hyperbolic_model_report.json")
        .exists());
}

#[test]
fn failed_check_exits_one() {
    // An impossible tolerance turns the conjugate-pair check into a
    // failure without any numeric breakdown.
    let dir = tempfile::tempdir().unwrap();
    let out = crlab(&["hilbert", "--tol", "1e-30"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("CHECK conjugate_pairs: FAIL"));
}

#[test]
fn malformed_config_exits_two_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"schema\":1,,,").unwrap();
    let out = crlab(&["hilbert", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("config error"), "{stderr}");
    assert!(stderr.contains("bad.json"), "{stderr}");
}

#[test]
fn wrong_schema_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("v2.json");
    std::fs::write(&cfg, "{\"schema\":2}").unwrap();
    let out = crlab(&["hilbert", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("schema"));
}

#[test]
fn invalid_grid_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = crlab(&["hilbert", "--grid", "100"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_cone_field_emits_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(
        &cfg,
        "{\"schema\":1,\"op\":{\"id\":\"cone-field\",\"params\":{\"points\":0}}}",
    )
    .unwrap();
    let out = crlab(
        &["disc-family", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("cone_field.csv")).unwrap();
    assert_eq!(csv, "p_1,p_2,p_3,d_1,d_2,d_3\n");
}

#[test]
fn disc_string_csv_has_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("string.json");
    std::fs::write(&cfg, "{\"schema\":1,\"op\":{\"id\":\"disc-string\"}}").unwrap();
    let out = crlab(
        &["disc-family", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("disc_string.csv")).unwrap();
    assert!(csv.starts_with("x_1,x_2,v_1,v_2,theta,re_z1,im_z1,re_z2,im_z2\n"));
    // Seven discs on a 512-node grid.
    assert_eq!(csv.lines().count(), 1 + 7 * 512);
}

#[test]
fn config_polynomials_change_the_model() {
    // A config with explicit polynomial components for the graph: terms
    // are [coefficient, [exponents...]] in the base coordinates.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("poly.json");
    std::fs::write(
        &cfg,
        r#"{
  "schema": 1,
  "model": {
    "h": [
      [[0.3, [0, 3, 0]], [0.2, [0, 1, 2]]],
      [[0.25, [3, 0, 0]], [-0.1, [1, 0, 2]]],
      [[0.15, [2, 1, 0]], [0.2, [0, 0, 3]]]
    ]
  }
}"#,
    )
    .unwrap();
    let out = crlab(
        &["disc-family", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("CHECK interior_half_wedge: PASS"));
}

#[test]
fn reruns_are_byte_identical() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for dir in [&d1, &d2] {
        let out = crlab(&["envelope", "--seed", "11"], dir.path());
        assert!(out.status.success());
    }
    for file in ["envelope_coverage_report.json", "coverage.csv"] {
        let a = std::fs::read(d1.path().join(file)).unwrap();
        let b = std::fs::read(d2.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}
