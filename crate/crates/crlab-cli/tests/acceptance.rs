//! The acceptance suite: one test per criterion, each printing a single
//! `ACCEPTANCE <n> <name>: PASS` line (run with `--nocapture` to see
//! them).  Criteria run one at a time behind a global lock so the
//! per-criterion wall-time budgets are meaningful on a single machine.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use crlab_cli::{scenarios, Opts, RunReport, ScenarioConfig};

static EXCLUSIVE: Mutex<()> = Mutex::new(());

fn run_criterion(
    n: usize,
    name: &str,
    budget: Duration,
    body: impl FnOnce() -> Result<(), String>,
) {
    let _guard = EXCLUSIVE.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let outcome = body();
    let elapsed = started.elapsed();
    match &outcome {
        Ok(()) if elapsed <= budget => {
            println!("ACCEPTANCE {n} {name}: PASS ({elapsed:.2?})");
        }
        Ok(()) => {
            println!("ACCEPTANCE {n} {name}: FAIL (over budget: {elapsed:.2?} > {budget:.2?})");
            panic!("criterion {n} exceeded its {budget:.2?} budget: {elapsed:.2?}");
        }
        Err(why) => {
            println!("ACCEPTANCE {n} {name}: FAIL ({why})");
            panic!("criterion {n} failed: {why}");
        }
    }
}

fn scenario(name: &str, cfg: &ScenarioConfig, out: &std::path::Path) -> Result<RunReport, String> {
    let opts = Opts {
        out: out.to_path_buf(),
        ..Opts::default()
    };
    scenarios::run(name, &opts, cfg).map_err(|e| e.to_string())
}

fn require_all_pass(report: &RunReport) -> Result<(), String> {
    for check in &report.checks {
        if !check.pass {
            return Err(format!(
                "check `{}` failed with measured value {:.6e}",
                check.name, check.measured
            ));
        }
    }
    Ok(())
}

fn require_check(report: &RunReport, name: &str) -> Result<f64, String> {
    let check = report
        .checks
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| format!("missing check `{name}`"))?;
    if !check.pass {
        return Err(format!(
            "check `{name}` failed with measured value {:.6e}",
            check.measured
        ));
    }
    Ok(check.measured)
}

#[test]
fn acceptance_1_hilbert_transform() {
    run_criterion(1, "hilbert-transform", Duration::from_secs(5), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = scenario("hilbert", &ScenarioConfig::default(), dir.path())?;
        // Conjugate pairs k ≤ 64 at N = 512 and the involution identity on
        // 100 random band-limited functions, both below 1e−10.
        require_check(&report, "conjugate_pairs")?;
        require_check(&report, "involution")?;
        Ok(())
    });
}

#[test]
fn acceptance_2_bishop_solver() {
    run_criterion(2, "bishop-solver", Duration::from_secs(30), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = scenario("bishop", &ScenarioConfig::default(), dir.path())?;
        // Flat case exact, contraction < 0.5 at c = 0.05, attachment
        // < 1e−10, and scaling slope ≥ 1.9 over c ∈ [0.02, 0.2].
        let drift = require_check(&report, "flat_exact")?;
        if drift != 0.0 {
            return Err(format!("flat drift {drift:e} is not exactly zero"));
        }
        let ratio = require_check(&report, "contraction_ratio")?;
        if ratio >= 0.5 {
            return Err(format!("contraction ratio {ratio}"));
        }
        require_check(&report, "attachment_residual")?;
        let slope = require_check(&report, "scaling_slope")?;
        if slope < 1.9 {
            return Err(format!("scaling slope {slope}"));
        }
        Ok(())
    });
}

#[test]
fn acceptance_3_half_attached_family() {
    run_criterion(3, "half-attached-family", Duration::from_secs(60), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        // Normalized model, leading direction (0, 1, 1), c = 0.02.
        let report = scenario("disc-family", &ScenarioConfig::default(), dir.path())?;
        require_all_pass(&report)?;
        // Every margin strictly positive (the size bound reports its
        // finite proportionality constant instead of a margin).
        for check in &report.checks {
            if check.name != "size_bound" && check.measured <= 0.0 {
                return Err(format!(
                    "check `{}` has nonpositive margin {:.3e}",
                    check.name, check.measured
                ));
            }
        }
        require_check(&report, "pivot_containment")?;
        Ok(())
    });
}

#[test]
fn acceptance_4_foliation_suite() {
    run_criterion(4, "foliation-suite", Duration::from_secs(10), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = scenario("foliation", &ScenarioConfig::default(), dir.path())?;
        // γ = 1: hyperbolic with λ = 1, four separatrices with slopes
        // ±√3 within 1e−3, conservation < 1e−8 per unit arclength.
        require_check(&report, "hyperbolic")?;
        require_check(&report, "bishop_invariant")?;
        let count = require_check(&report, "four_separatrices")?;
        if count != 4.0 {
            return Err(format!("{count} separatrices"));
        }
        require_check(&report, "separatrix_slopes")?;
        require_check(&report, "leaf_conservation")?;
        let oracle = report.measured.get("slope_oracle").copied().unwrap_or(0.0);
        if (oracle - 3.0_f64.sqrt()).abs() > 1e-12 {
            return Err(format!("slope oracle {oracle} is not √3"));
        }
        Ok(())
    });
}

#[test]
fn acceptance_5_condition_checkers() {
    run_criterion(5, "condition-checkers", Duration::from_secs(30), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let first = scenario("check-condition", &ScenarioConfig::default(), dir.path())?;
        require_all_pass(&first)?;
        // Deterministic at the default seed: a rerun reproduces the
        // verdicts exactly.
        let second = scenario("check-condition", &ScenarioConfig::default(), dir.path())?;
        if first.to_json() != second.to_json() {
            return Err("verdicts changed between identical runs".into());
        }
        Ok(())
    });
}

#[test]
fn acceptance_6_special_point_sweep() {
    run_criterion(6, "special-point-sweep", Duration::from_secs(30), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = scenario("special-point", &ScenarioConfig::default(), dir.path())?;
        // Three shapes, each within two grid pitches of the brute-force
        // extremal sample and with the tangent inside the filled cone.
        require_all_pass(&report)?;
        for shape in ["blob", "half-plane", "crescent"] {
            let off = require_check(&report, &format!("{shape}_extremal_match"))?;
            if off > 2.0 {
                return Err(format!("{shape} contact {off:.2} pitches away"));
            }
            require_check(&report, &format!("{shape}_direction_in_cone"))?;
        }
        Ok(())
    });
}

#[test]
fn acceptance_7_continuity_principle() {
    run_criterion(7, "continuity-principle", Duration::from_secs(30), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = scenario("envelope", &ScenarioConfig::default(), dir.path())?;
        let sigma = require_check(&report, "sigma_spot_check")?;
        if sigma != 0.025 {
            return Err(format!("sigma {sigma} is not exactly 0.025"));
        }
        require_check(&report, "bidisc_center_covered")?;
        require_check(&report, "outside_point_covered")?;
        Ok(())
    });
}

#[test]
fn acceptance_8_gauss_kernel() {
    run_criterion(8, "gauss-kernel", Duration::from_secs(20), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let report = scenario("gauss", &ScenarioConfig::default(), dir.path())?;
        // |G_τ f − f| < 1e−3 at τ = 1e4 for f ∈ {1, z₁, z₁²} on a tilted
        // slice in C², monotone over the τ decades.
        for name in ["recovers_one", "recovers_z1", "recovers_z1_squared"] {
            require_check(&report, name)?;
        }
        require_check(&report, "error_monotone_in_tau")?;
        Ok(())
    });
}

#[test]
fn acceptance_9_torus_example() {
    run_criterion(9, "torus-example", Duration::from_secs(120), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = ScenarioConfig::default();
        cfg.op.params.insert("det_samples".into(), 100.0);
        let report = scenario("torus", &cfg, dir.path())?;
        // Frame identities to 1e−8 at 10⁴ points, ρ = 0 to 1e−12,
        // determinant ratio in [0.9, 1.1] at P = 1e3 across 100 points,
        // cubic-variant vanishing to 1e−8, and a finite bending constant
        // over the radius-0.5 ball with rank 4 everywhere.
        require_check(&report, "frame_identities")?;
        require_check(&report, "torus_polynomial_vanishes")?;
        require_check(&report, "det_ratio_band")?;
        require_check(&report, "rank_four")?;
        require_check(&report, "cubic_variant_vanishes")?;
        require_check(&report, "bending_constant_found")?;
        require_check(&report, "transversality")?;
        Ok(())
    });
}

/// The full-ball doubling search (radius 5) is budgeted separately and
/// marked long; run it explicitly with `--ignored`.
#[test]
#[ignore]
fn acceptance_9_torus_full_ball() {
    run_criterion(9, "torus-full-ball", Duration::from_secs(600), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = ScenarioConfig::default();
        cfg.op.params.insert("radius".into(), 5.0);
        cfg.op.params.insert("per_axis".into(), 8.0);
        cfg.op.params.insert("det_samples".into(), 4.0);
        cfg.op.params.insert("identity_points".into(), 1000.0);
        let report = scenario("torus", &cfg, dir.path())?;
        require_check(&report, "bending_constant_found")?;
        Ok(())
    });
}

#[test]
fn acceptance_10_determinism() {
    run_criterion(10, "determinism", Duration::from_secs(60), || {
        // Rerunning the binary with identical config and seed must give
        // byte-identical reports and artifacts.
        let d1 = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d2 = tempfile::tempdir().map_err(|e| e.to_string())?;
        for scenario_name in ["foliation", "envelope"] {
            for dir in [&d1, &d2] {
                let out = std::process::Command::new(env!("CARGO_BIN_EXE_crlab"))
                    .args([scenario_name, "--seed", "13", "--out"])
                    .arg(dir.path())
                    .output()
                    .map_err(|e| e.to_string())?;
                if !out.status.success() {
                    return Err(format!(
                        "{scenario_name}: {}",
                        String::from_utf8_lossy(&out.stderr)
                    ));
                }
            }
        }
        for entry in std::fs::read_dir(d1.path()).map_err(|e| e.to_string())? {
            let entry = entry.map_err(|e| e.to_string())?;
            let name = entry.file_name();
            let a = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
            let b = std::fs::read(d2.path().join(&name)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!(
                    "{} differs between identical runs",
                    name.to_string_lossy()
                ));
            }
        }
        Ok(())
    });
}
