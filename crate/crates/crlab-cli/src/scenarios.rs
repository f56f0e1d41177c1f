//! The built-in scenarios, one per subcommand.
//!
//! Every scenario follows the same shape: build the geometry (built-in
//! model or config polynomials), run the module checks, record measured
//! constants, and write the JSON report plus any CSV artifacts under the
//! output directory.  All randomness is seeded from the run options, so
//! reruns are byte-identical.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crlab::bishop_solver::{solve_bishop, BishopProblem, SolverConfig};
use crlab::circle_ops::{hilbert_t1, CircleFn, CircleGrid};
use crlab::cr_geometry::{
    GenericGraph, MaximallyRealGraph, RealMap, Region, SupportModel, SurfaceInHypersurface,
    TangencyKind,
};
use crlab::disc_families::{
    attached_pivot_family, cone_field_from_family, half_attached_family, shared_psi,
    verify_family_properties, FamilyContext,
};
use crlab::extension_lab::{
    extension_coverage, gauss_approximation, sigma_formula, two_piece_scenario, Domain, RealSlice,
    SliceFunction, TwoPieceFigure,
};
use crlab::foliation_analysis::{
    check_characteristic_condition, check_orbit_condition, find_special_point, integrate_leaf,
    separatrix_tree, ClosedSetSample, ConditionConfig, LeafField, OrbitConfig, SweepConfig,
    VectorField, VerdictStatus,
};
use crlab::torus_example::{
    ball_grid, bracket_rank_report, build_mp, build_reeb_frame, cubic_leading_coefficient,
    find_min_p, torus_defining, torus_samples, transversality_check, write_report_csv, AXIS_MARGIN,
};

use crate::{write_csv_artifact, CliError, Opts, RunReport, ScenarioConfig};

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

fn circle_grid(n: usize) -> Result<CircleGrid, CliError> {
    CircleGrid::new(n).map_err(|e| CliError::Config(format!("--grid {n}: {e}")))
}

/// Boundary seed of the flat half-attached disc: the conjugate is a bump
/// supported on the negative half-boundary, so `X⁰ = x − T₁Y⁰` has real
/// boundary values on `∂⁺Δ` and centre value `x` at `ζ = 1`.
fn flat_seed(grid: CircleGrid, x: &[f64], v: &[f64], c: f64) -> CircleFn {
    let bump = |theta: f64| -> f64 {
        let u = (theta - PI) / (0.49 * PI);
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    };
    let y0 = CircleFn::from_fn(grid, v.len(), |theta| {
        v.iter().map(|vi| c * vi * bump(theta)).collect()
    });
    let x_const = CircleFn::from_fn(grid, x.len(), |_t| x.to_vec());
    x_const
        .axpby(1.0, &hilbert_t1(&y0), -1.0)
        .expect("same grid")
}

fn solver_cfg(c: f64) -> SolverConfig {
    SolverConfig {
        c,
        alpha: 0.5,
        rho1: 1.0,
        tol: 1e-13,
        max_iter: 300,
    }
}

// ---------------------------------------------------------------------------
// hilbert
// ---------------------------------------------------------------------------

/// The `hilbert-identity` scenario: the conjugate of `cos kθ` is `sin kθ`,
/// and `T₁` is an involution up to the value at `ζ = 1`.
pub fn run_hilbert(opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("hilbert-identity", opts.seed);
    let grid = circle_grid(opts.grid)?;
    let n = grid.len();

    let k_max = (cfg.param("k_max", 64.0) as usize).min(n / 2 - 1);
    let mut worst_pair = 0.0_f64;
    for k in 1..=k_max {
        let f = CircleFn::scalar_from_fn(grid, |theta| (k as f64 * theta).cos());
        let want = CircleFn::scalar_from_fn(grid, |theta| (k as f64 * theta).sin());
        let got = hilbert_t1(&f);
        worst_pair = worst_pair.max(got.sup_distance(&want).expect("same grid"));
    }
    report.check("conjugate_pairs", worst_pair < opts.tol, worst_pair);

    // Involution on random band-limited functions:
    // `T₁(T₁X) = −X + X(1)`.
    let trials = cfg.param("trials", 100.0) as usize;
    let band = (n / 8).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst_inv = 0.0_f64;
    for _ in 0..trials {
        let coeffs: Vec<(f64, f64, f64)> = (1..band)
            .map(|k| (k as f64, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let x = CircleFn::scalar_from_fn(grid, |theta| {
            coeffs
                .iter()
                .map(|(k, a, b)| a * (k * theta).cos() + b * (k * theta).sin())
                .sum()
        });
        let twice = hilbert_t1(&hilbert_t1(&x));
        let x1 = x.at_one()[0];
        let residual = twice
            .map_samples(1, |j, v| vec![v[0] + x.value_at(j)[0] - x1])
            .sup_norm();
        worst_inv = worst_inv.max(residual);
    }
    report.check("involution", worst_inv < opts.tol, worst_inv);
    report.measure("grid", n as f64);
    report.measure("band_limit", band as f64);
    Ok(report)
}

// ---------------------------------------------------------------------------
// bishop
// ---------------------------------------------------------------------------

fn quadratic_h() -> RealMap {
    Arc::new(|x: &[f64]| vec![0.5 * x[0] * x[0] - 0.3 * x[1] * x[1], 0.4 * x[0] * x[1]])
}

/// The Bishop-solver scenario: exactness on the flat graph, fast
/// contraction on a quadratic graph, and the deformation scaling slope.
pub fn run_bishop(opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("bishop-solver", opts.seed);
    let grid = circle_grid(opts.grid)?;
    let c = cfg.param("c", 0.05);

    // Flat graph: the seed is already the fixed point.
    let flat = BishopProblem {
        h: Arc::new(|x: &[f64]| vec![0.0; x.len()]),
        d: 1.0,
        x0: flat_seed(grid, &[0.01, -0.02], &[1.0, 0.0], c),
        config: solver_cfg(c),
    };
    let rep = solve_bishop(&flat).map_err(|e| CliError::Numeric(e.to_string()))?;
    let drift = rep.x.sup_distance(&flat.x0).expect("same grid");
    report.check("flat_exact", drift == 0.0, drift);

    // Quadratic graph at the configured scaling.
    let quad = |cq: f64| BishopProblem {
        h: quadratic_h(),
        d: 1.0,
        x0: flat_seed(grid, &[0.0, 0.0], &[1.0, 0.5], cq),
        config: solver_cfg(cq),
    };
    let rep = solve_bishop(&quad(c)).map_err(|e| CliError::Numeric(e.to_string()))?;
    report.check(
        "contraction_ratio",
        rep.contraction_ratio < 0.5,
        rep.contraction_ratio,
    );
    report.check(
        "attachment_residual",
        rep.attachment_residual < opts.tol,
        rep.attachment_residual,
    );

    // Deformation scaling: log‖X − X⁰‖_{C¹} vs log c.
    let mut pts = Vec::new();
    for i in 0..8 {
        let ci = 0.02 * (10.0_f64).powf(i as f64 / 7.0);
        let p = quad(ci);
        let rep = solve_bishop(&p).map_err(|e| CliError::Numeric(e.to_string()))?;
        let diff = rep.x.axpby(1.0, &p.x0, -1.0).expect("same grid");
        let c1_norm = diff.sup_norm() + diff.derivative_theta().sup_norm();
        pts.push((ci.ln(), c1_norm.ln()));
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    report.check("scaling_slope", slope >= 1.9, slope);
    report.measure("c", c);
    Ok(report)
}

// ---------------------------------------------------------------------------
// disc-family
// ---------------------------------------------------------------------------

/// A maximally real graph with vanishing 2-jet at the origin (the
/// normalized model the family checks refer to).
fn cubic_m1() -> MaximallyRealGraph {
    MaximallyRealGraph {
        n: 3,
        h: Arc::new(|x: &[f64]| {
            vec![
                0.3 * x[1].powi(3) + 0.2 * x[1] * x[2] * x[2],
                0.25 * x[0].powi(3) - 0.1 * x[0] * x[2] * x[2],
                0.15 * x[0] * x[0] * x[1] + 0.2 * x[2].powi(3),
            ]
        }),
        rho1: 1.0,
        normalization_order: 2,
    }
}

fn config_m1(cfg: &ScenarioConfig) -> Result<MaximallyRealGraph, CliError> {
    match (&cfg.model.builtin, &cfg.model.h) {
        (_, Some(polys)) => {
            if polys.len() != 3 {
                return Err(CliError::Config(format!(
                    "model.h needs 3 components, got {}",
                    polys.len()
                )));
            }
            let polys = polys.clone();
            Ok(MaximallyRealGraph {
                n: 3,
                h: Arc::new(move |x: &[f64]| polys.iter().map(|p| p.eval(x)).collect()),
                rho1: 1.0,
                normalization_order: 2,
            })
        }
        (Some(id), None) if id == "cubic" => Ok(cubic_m1()),
        (Some(id), None) => Err(CliError::Config(format!("unknown builtin model `{id}`"))),
        (None, None) => Ok(cubic_m1()),
    }
}

fn pivot_model() -> (GenericGraph, MaximallyRealGraph) {
    let phi = |x: &[f64], y1: f64| {
        vec![
            0.1 * (x[0] * x[0] - y1 * x[1]),
            0.05 * x[0] * x[2] + 0.08 * y1 * y1,
        ]
    };
    let h1 = |x: &[f64]| 0.1 * x[0] * x[0] + 0.05 * x[1] * x[2];
    let m = GenericGraph {
        n: 3,
        crdim: 1,
        phi: Arc::new(phi),
        rho1: 1.0,
        normalized: true,
    };
    let m1 = MaximallyRealGraph {
        n: 3,
        h: Arc::new(move |x: &[f64]| {
            let first = h1(x);
            let rest = phi(x, first);
            vec![first, rest[0], rest[1]]
        }),
        rho1: 1.0,
        normalization_order: 1,
    };
    (m, m1)
}

/// The disc-family scenario.  Operations: `verify` (default) checks the
/// half-attached family properties and the pivot containment inequality;
/// `disc-string` emits the boundary curves of a string of discs;
/// `cone-field` emits sampled (point, direction) pairs of the cone field.
pub fn run_disc_family(opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let op = cfg.op.id.as_deref().unwrap_or("verify");
    let mut report = RunReport::new(&format!("disc-family-{op}"), opts.seed);
    let psi = shared_psi(opts.grid).map_err(|e| CliError::Numeric(e.to_string()))?;
    match op {
        "verify" => {
            let c = cfg.param("c", 0.02);
            let m1 = config_m1(cfg)?;
            let v1 = vec![0.0, 1.0, 1.0];
            let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &solver_cfg(c))
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let ctx = FamilyContext {
                n: 3,
                v1,
                base_point: vec![0.0; 3],
                size_scale: c * c,
                solver_tol: 1e-10,
                support: Some(SupportModel::quadric(3)),
                ambient: Some(GenericGraph::flat(3, 1.0)),
                concavity_constant: 1.0,
                alpha: 0.5,
            };
            let prop = verify_family_properties(&family, &m1, &ctx);
            for check in &prop.checks {
                report.check(&check.name, check.pass, check.margin);
            }

            // Pivot containment: the round component dominates the graph
            // height, `r(1 − cos θ) > |h₁(X(θ))|` away from the pivot.
            let (m, m1p) = pivot_model();
            let r = cfg.param("pivot_radius", 0.05);
            let grid = circle_grid(opts.grid)?;
            let pivot = attached_pivot_family(&m, &m1p, &[0.0; 3], r, grid, &solver_cfg(r))
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let disc = pivot
                .disc(&[r, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let mut margin = f64::INFINITY;
            for j in 1..grid.len() {
                let theta = grid.theta(j);
                let xv = disc.boundary_x().value_at(j);
                let h1 = m1p.h_at(&xv)[0];
                margin = margin.min(r * (1.0 - theta.cos()) - h1.abs());
            }
            report.check("pivot_containment", margin > 0.0, margin);
            report.measure("c", c);
        }
        "disc-string" => {
            // A string of half-attached discs with centres marching along
            // the first coordinate axis.
            let c = cfg.param("c", 0.05);
            let count = cfg.param("count", 7.0) as usize;
            let m1 = MaximallyRealGraph::flat(2, 1.0);
            let family = half_attached_family(&m1, &[0.0; 2], &[1.0, 0.0], c, &psi, &solver_cfg(c))
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let samples: Vec<Vec<f64>> = (0..count)
                .map(|k| {
                    let spread = if count > 1 {
                        2.0 * k as f64 / (count - 1) as f64 - 1.0
                    } else {
                        0.0
                    };
                    vec![spread * c * c, 0.0, 0.0, 0.0]
                })
                .collect();
            let mut buf = Vec::new();
            family
                .write_csv(&samples, &mut buf)
                .map_err(CliError::from)?;
            std::fs::create_dir_all(&opts.out)?;
            let file = cfg.output.csv.clone().unwrap_or("disc_string.csv".into());
            std::fs::write(opts.out.join(&file), &buf)?;
            report.artifacts.push(file);
            report.check("string_built", true, count as f64);
            report.measure("discs", count as f64);
        }
        "cone-field" => {
            let c = cfg.param("c", 0.05);
            let count = cfg.param("points", 3.0) as usize;
            let m1 = cubic_m1();
            let v1 = vec![0.0, 1.0, 1.0];
            let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &solver_cfg(c))
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let base_params: Vec<Vec<f64>> = (0..count)
                .map(|k| {
                    let mut p = vec![0.0; 6];
                    if count > 1 {
                        p[0] = (2.0 * k as f64 / (count - 1) as f64 - 1.0) * 0.5 * c * c;
                    }
                    p
                })
                .collect();
            let mut rows = Vec::new();
            if !base_params.is_empty() {
                let mut cone = cone_field_from_family(&family, &base_params, &[3, 4, 5], 0.25 * c)
                    .map_err(|e| CliError::Numeric(e.to_string()))?;
                cone.fill(&vec![vec![1.0, 0.0, 0.0]; count], &[0.5, 0.9]);
                for (p, gens) in cone.base_points.iter().zip(cone.generators.iter()) {
                    for g in gens {
                        rows.push(format!(
                            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                            p[0], p[1], p[2], g[0], g[1], g[2]
                        ));
                    }
                }
            }
            let file = cfg.output.csv.clone().unwrap_or("cone_field.csv".into());
            let empty = rows.is_empty();
            write_csv_artifact(
                &mut report,
                &opts.out,
                &file,
                "p_1,p_2,p_3,d_1,d_2,d_3",
                &rows,
            )?;
            report.check("cone_sampled", empty == (count == 0), rows.len() as f64);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown disc-family op `{other}` (verify, disc-string, cone-field)"
            )))
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// foliation
// ---------------------------------------------------------------------------

/// The hyperbolic-model foliation scenario: saddle classification,
/// separatrix count and slopes against the level-set oracle, and leaf
/// conservation.
pub fn run_foliation(opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let gamma = cfg.param("gamma", 1.0);
    let mut report = RunReport::new("foliation-hyperbolic-model", opts.seed);
    if gamma <= 0.5 {
        return Err(CliError::Config(format!(
            "gamma = {gamma} is not hyperbolic (needs gamma > 1/2)"
        )));
    }
    let (a, b) = (2.0 * gamma + 1.0, 2.0 * gamma - 1.0);
    let s = SurfaceInHypersurface::in_flat_hypersurface(move |x, y| a * x * x - b * y * y, 1.0);
    let region = Region {
        x_min: -0.8,
        x_max: 0.8,
        y_min: -0.8,
        y_max: 0.8,
    };
    let tree = separatrix_tree(&s, region).map_err(|e| CliError::Numeric(e.to_string()))?;
    report.check(
        "single_saddle",
        tree.points.len() == 1,
        tree.points.len() as f64,
    );
    let saddle = &tree.points[0];
    report.check(
        "hyperbolic",
        saddle.kind == TangencyKind::Hyperbolic,
        saddle.lambda,
    );
    report.check(
        "bishop_invariant",
        (saddle.lambda - gamma).abs() < 1e-3,
        (saddle.lambda - gamma).abs(),
    );
    report.check(
        "four_separatrices",
        tree.separatrices.len() == 4,
        tree.separatrices.len() as f64,
    );

    // Slope oracle from the zero level set: y = ±√(a/b)·x.
    let oracle = (a / b).sqrt();
    let mut worst_slope = 0.0_f64;
    for sep in &tree.separatrices {
        let far = sep
            .points
            .iter()
            .max_by(|p, q| {
                (p[0] * p[0] + p[1] * p[1])
                    .partial_cmp(&(q[0] * q[0] + q[1] * q[1]))
                    .unwrap()
            })
            .expect("separatrix has points");
        let slope = (far[1] / far[0]).abs();
        worst_slope = worst_slope.max((slope - oracle).abs());
    }
    report.check("separatrix_slopes", worst_slope < 1e-3, worst_slope);

    // Conservation of the graphing level along a leaf.
    let field =
        LeafField::from_surface(&s, region).map_err(|e| CliError::Numeric(e.to_string()))?;
    let g = move |p: &[f64]| a * p[0] * p[0] - b * p[1] * p[1];
    let start = vec![0.7, 0.2];
    let leaf =
        integrate_leaf(&field, &start, 1.0, 1e-3).map_err(|e| CliError::Numeric(e.to_string()))?;
    let g0 = g(&start);
    let drift = leaf
        .points
        .iter()
        .map(|p| (g(p) - g0).abs())
        .fold(0.0_f64, f64::max)
        / leaf.arclength().max(1e-12);
    report.check("leaf_conservation", drift < 1e-8, drift);

    std::fs::create_dir_all(&opts.out)?;
    let file = cfg.output.csv.clone().unwrap_or("separatrices.csv".into());
    tree.write_csv(&opts.out.join(&file))?;
    report.artifacts.push(file);
    report.measure("gamma", gamma);
    report.measure("slope_oracle", oracle);
    Ok(report)
}

// ---------------------------------------------------------------------------
// check-condition
// ---------------------------------------------------------------------------

/// The four condition-checker verdicts: trivially foliated ball (holds),
/// annulus with a transversal circle (fails), Levi-flat orbit trap
/// (fails), and single-point sets (both conditions hold).
pub fn run_check_condition(opts: &Opts, _cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("check-condition", opts.seed);

    // 1. Point cloud in a trivially foliated ball: the condition holds.
    let field = LeafField::from_fn(2, |_| vec![1.0, 0.0]);
    let c = ClosedSetSample::from_points(vec![vec![0.2, -0.1]], 0.02);
    let cond = ConditionConfig {
        half_width: Some(0.5),
        ..ConditionConfig::default()
    };
    let verdict = check_characteristic_condition(&field, &c, &cond)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    report.check(
        "foliated_ball_holds",
        verdict.status == VerdictStatus::Holds,
        1.0,
    );

    // 2. Circle transversal to a radial foliation: no free region to
    // sweep from, the condition fails.
    let radial = LeafField::from_fn(2, |p| {
        let n = (p[0] * p[0] + p[1] * p[1]).sqrt().max(1e-9);
        vec![p[0] / n, p[1] / n]
    });
    let cloud: Vec<Vec<f64>> = (0..256)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / 256.0;
            vec![t.cos(), t.sin()]
        })
        .collect();
    let circle = ClosedSetSample::new(
        |p: &[f64]| ((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() <= 1e-9,
        cloud,
        0.05,
    );
    let cond = ConditionConfig {
        center: Some(vec![1.0, 0.0]),
        half_width: Some(0.4),
        ..ConditionConfig::default()
    };
    let verdict = check_characteristic_condition(&radial, &circle, &cond)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    report.check(
        "transversal_circle_fails",
        verdict.status == VerdictStatus::Fails,
        1.0,
    );

    // 3. Levi-flat leaf trap: orbits of the leaf frame never escape the
    // closed set, the orbit condition fails with a trapped certificate.
    let shrink = |p: &[f64]| (1.0 - (p[2] * p[2] + p[3] * p[3])).max(0.0);
    let frame: Vec<VectorField> = vec![
        Arc::new(move |p: &[f64]| vec![0.0, 0.0, shrink(p), 0.0]),
        Arc::new(move |p: &[f64]| vec![0.0, 0.0, 0.0, shrink(p)]),
    ];
    let mut cloud = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            let x = -0.75 + 0.3 * i as f64;
            let y = -0.75 + 0.3 * j as f64;
            if x * x + y * y <= 0.81 {
                cloud.push(vec![0.0, 0.0, x, y]);
            }
        }
    }
    let trap = ClosedSetSample::new(
        |p: &[f64]| {
            p[0].abs() <= 0.1 && p[1].abs() <= 0.1 && p[2] * p[2] + p[3] * p[3] <= 1.0 + 1e-3
        },
        cloud,
        0.05,
    );
    let orbit_cfg = OrbitConfig {
        seed: opts.seed,
        ..OrbitConfig::default()
    };
    let verdict = check_orbit_condition(&frame, &trap, &orbit_cfg);
    report.check(
        "orbit_trap_fails",
        verdict.status == VerdictStatus::Fails,
        1.0,
    );

    // 4. Single points: both conditions hold.
    let single_frame: Vec<VectorField> = vec![Arc::new(|_: &[f64]| vec![1.0, 0.0, 0.0, 0.0])];
    let single = ClosedSetSample::from_points(vec![vec![0.0; 4]], 0.05);
    let verdict = check_orbit_condition(&single_frame, &single, &orbit_cfg);
    report.check(
        "single_point_orbit_holds",
        verdict.status == VerdictStatus::Holds,
        1.0,
    );
    let single2 = ClosedSetSample::from_points(vec![vec![0.1, 0.3]], 0.02);
    let cond = ConditionConfig {
        half_width: Some(0.5),
        ..ConditionConfig::default()
    };
    let verdict = check_characteristic_condition(&field, &single2, &cond)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    report.check(
        "single_point_characteristic_holds",
        verdict.status == VerdictStatus::Holds,
        1.0,
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// special-point
// ---------------------------------------------------------------------------

struct Shape {
    name: &'static str,
    cloud: Vec<Vec<f64>>,
    set: ClosedSetSample,
    center: Vec<f64>,
    half_width: f64,
    /// Grid pitch of the sample cloud (the accuracy unit of the oracle).
    pitch: f64,
}

fn blob_shape() -> Shape {
    let mut cloud = Vec::new();
    let pitch = 0.6 / 39.0;
    for i in 0..40 {
        for j in 0..40 {
            let x = -0.3 + 0.6 * i as f64 / 39.0;
            let y = -0.8 + 0.6 * j as f64 / 39.0;
            if x * x + (y + 0.5) * (y + 0.5) <= 0.09 {
                cloud.push(vec![x, y]);
            }
        }
    }
    let set = ClosedSetSample::new(
        |p: &[f64]| p[0] * p[0] + (p[1] + 0.5) * (p[1] + 0.5) <= 0.09,
        cloud.clone(),
        0.02,
    );
    Shape {
        name: "blob",
        cloud,
        set,
        center: vec![0.0, -0.5],
        half_width: 0.6,
        pitch,
    }
}

fn half_plane_shape() -> Shape {
    let mut cloud = Vec::new();
    let pitch = 0.6 / 11.0;
    for i in 0..24 {
        for j in 0..12 {
            cloud.push(vec![
                -0.6 + 1.2 * i as f64 / 23.0,
                -0.8 + 0.6 * j as f64 / 11.0,
            ]);
        }
    }
    let set = ClosedSetSample::new(|p: &[f64]| p[1] <= -0.2, cloud.clone(), 0.03);
    Shape {
        name: "half-plane",
        cloud,
        set,
        center: vec![0.0, -0.2],
        half_width: 0.7,
        pitch,
    }
}

fn crescent_shape() -> Shape {
    // A crescent opening to the right: an annular band around
    // (0, −0.5) with the right quadrant removed.
    let mut cloud = Vec::new();
    let pitch = 0.8 / 47.0;
    let inside = |p: &[f64]| {
        let (dx, dy) = (p[0], p[1] + 0.5);
        let r = (dx * dx + dy * dy).sqrt();
        let angle = dy.atan2(dx);
        (0.2..=0.3).contains(&r) && angle.abs() >= PI / 3.0
    };
    for i in 0..48 {
        for j in 0..48 {
            let p = vec![-0.4 + 0.8 * i as f64 / 47.0, -0.9 + 0.8 * j as f64 / 47.0];
            if inside(&p) {
                cloud.push(p);
            }
        }
    }
    let set = ClosedSetSample::new(inside, cloud.clone(), 0.03);
    Shape {
        name: "crescent",
        cloud,
        set,
        center: vec![0.0, -0.5],
        half_width: 0.6,
        pitch,
    }
}

/// The special-point sweep over three constructed shapes: the blended
/// flow lines must first touch each set within two grid pitches of the
/// brute-force extremal sample, with the blended tangent inside the
/// filled cone.
pub fn run_special_point(opts: &Opts, _cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("special-point", opts.seed);
    let field = LeafField::from_fn(2, |_| vec![1.0, 0.0]);
    for shape in [blob_shape(), half_plane_shape(), crescent_shape()] {
        let mut cone = crlab::disc_families::ConeField {
            base_points: vec![shape.center.clone()],
            generators: vec![vec![vec![1.0, 0.0]]],
            openness: vec![1.0],
            filled: false,
        };
        cone.fill(&[vec![1.0, 0.0]], &[0.9, 0.95, 0.99]);
        let cfg = SweepConfig {
            condition: ConditionConfig {
                center: Some(shape.center.clone()),
                half_width: Some(shape.half_width),
                ..ConditionConfig::default()
            },
            ..SweepConfig::default()
        };
        let sp = find_special_point(&field, &shape.set, &cone, &cfg)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        // Brute-force oracle: the flow box sweeps horizontal lines in
        // from one vertical side, so the first contact is at an extremal
        // second coordinate of the sample cloud.
        let y_top = shape
            .cloud
            .iter()
            .map(|p| p[1])
            .fold(f64::NEG_INFINITY, f64::max);
        let y_bot = shape
            .cloud
            .iter()
            .map(|p| p[1])
            .fold(f64::INFINITY, f64::min);
        let off = (sp.point[1] - y_top).abs().min((sp.point[1] - y_bot).abs());
        report.check(
            &format!("{}_extremal_match", shape.name),
            off <= 2.0 * shape.pitch,
            off / shape.pitch,
        );
        report.check(
            &format!("{}_direction_in_cone", shape.name),
            sp.cone_margin > 0.0,
            sp.cone_margin,
        );
        report.check(
            &format!("{}_supports_one_side", shape.name),
            sp.side_fraction >= 0.99,
            sp.side_fraction,
        );
        report.measure(&format!("{}_pitch", shape.name), shape.pitch);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// envelope
// ---------------------------------------------------------------------------

/// The continuity-principle scenario: the σ formula spot check and the
/// two-piece-figure isotopy whose coverage crosses the boundary.
pub fn run_envelope(opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("envelope-coverage", opts.seed);
    let sigma = sigma_formula(0.1, 1.0, 2.0);
    report.check("sigma_spot_check", sigma == 0.025, sigma);

    let steps = cfg.param("steps", 21.0) as usize;
    let iso = two_piece_scenario(steps).map_err(|e| CliError::Numeric(e.to_string()))?;
    let cloud = extension_coverage(&iso).map_err(|e| CliError::Numeric(e.to_string()))?;
    let domain = TwoPieceFigure;
    let outside = vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.0)];
    report.check(
        "outside_point_covered",
        !domain.contains(&outside) && cloud.covers(&outside),
        1.0,
    );
    let center = vec![Complex64::new(0.0, 0.0); 2];
    report.check("bidisc_center_covered", cloud.covers(&center), 1.0);

    std::fs::create_dir_all(&opts.out)?;
    let file = cfg.output.csv.clone().unwrap_or("coverage.csv".into());
    cloud.write_csv(&opts.out.join(&file))?;
    report.artifacts.push(file);
    report.measure("isotopy_steps", steps as f64);
    report.measure("coverage_points", cloud.points.len() as f64);
    Ok(report)
}

// ---------------------------------------------------------------------------
// gauss
// ---------------------------------------------------------------------------

/// The Gauss-kernel scenario on a tilted maximally real slice in C²:
/// recovery of 1, z₁ and z₁² at large τ, and monotone error decay over
/// the τ decades.
pub fn run_gauss(opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("gauss-approximation", opts.seed);
    let eps = cfg.param("tilt", 0.05);
    let slice = RealSlice {
        n: 2,
        l: Arc::new(move |x: &[f64]| vec![eps * x[0], eps * x[1]]),
        half_width: 0.5,
    };
    let zhat = vec![Complex64::new(0.05, 0.05 * eps), Complex64::new(0.0, 0.0)];
    let fns: Vec<(&str, SliceFunction)> = vec![
        ("one", Arc::new(|_z: &[Complex64]| Complex64::new(1.0, 0.0))),
        ("z1", Arc::new(|z: &[Complex64]| z[0])),
        ("z1_squared", Arc::new(|z: &[Complex64]| z[0] * z[0])),
    ];
    let tau_top = cfg.param("tau", 1e4);
    for (name, f) in &fns {
        let exact = f(&zhat);
        let got = gauss_approximation(f, &slice, &zhat, tau_top)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let err = (got - exact).norm();
        report.check(&format!("recovers_{name}"), err < 1e-3, err);
    }
    // Monotone decay for the hardest of the three.
    let f = &fns[2].1;
    let exact = f(&zhat);
    let mut last = f64::INFINITY;
    let mut monotone = true;
    for tau in [tau_top / 100.0, tau_top / 10.0, tau_top] {
        let got = gauss_approximation(f, &slice, &zhat, tau)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let err = (got - exact).norm();
        monotone &= err < last;
        report.measure(&format!("error_tau_{tau:.0e}"), err);
        last = err;
    }
    report.check("error_monotone_in_tau", monotone, last);
    report.measure("tilt", eps);
    Ok(report)
}

// ---------------------------------------------------------------------------
// torus
// ---------------------------------------------------------------------------

fn band_points(count: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let axis = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if r <= 2.0 && axis >= 0.4 {
            out.push(p);
        }
    }
    out
}

/// The torus-verify scenario: frame identities, the vanishing of the
/// defining polynomial on the torus, transversality, the quartic
/// determinant ratio at large bending, the cubic-variant vanishing point,
/// and the doubling search for the bending constant over the configured
/// ball radius.
pub fn run_torus(opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("torus-verify", opts.seed);
    let radius = cfg.param("radius", 0.5);
    let frame =
        Arc::new(build_reeb_frame(32, opts.seed).map_err(|e| CliError::Numeric(e.to_string()))?);

    // Pointwise identities at random points of the ball of radius 2.
    let idp = cfg.param("identity_points", 10_000.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1d);
    let mut worst = 0.0_f64;
    let mut checked = 0usize;
    while checked < idp {
        let x: [f64; 3] = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        if (x[0] * x[0] + x[1] * x[1]).sqrt() < AXIS_MARGIN {
            continue;
        }
        checked += 1;
        let f = frame.eval(&x);
        // Cross-product identity K¹ × K² = A and orthogonality.
        let cross = [
            f.k1[1] * f.k2[2] - f.k1[2] * f.k2[1],
            f.k1[2] * f.k2[0] - f.k1[0] * f.k2[2],
            f.k1[0] * f.k2[1] - f.k1[1] * f.k2[0],
        ];
        for j in 0..3 {
            worst = worst.max((cross[j] - f.a[j]).abs());
        }
        let dot = |u: &[f64; 3], v: &[f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        worst = worst
            .max(dot(&f.a, &f.k1).abs())
            .max(dot(&f.a, &f.k2).abs())
            .max(dot(&f.k1, &f.k2).abs())
            .max((dot(&f.a, &f.a) - 1.0).abs());
    }
    report.check("frame_identities", worst < 1e-8, worst);

    // The torus polynomial vanishes on the parametrized samples.
    let rho_max = torus_samples(128, 64)
        .iter()
        .map(|x| torus_defining(x).abs())
        .fold(0.0_f64, f64::max);
    report.check("torus_polynomial_vanishes", rho_max < 1e-12, rho_max);

    // Transversality along the torus.
    let p = cfg.param("p", 1e3);
    let model = Arc::new(build_mp(frame.clone(), p).map_err(|e| CliError::Numeric(e.to_string()))?);
    let trans = transversality_check(&model, 32, 16);
    report.check(
        "transversality",
        trans.holds,
        trans.min_spanning_singular_value,
    );

    // Determinant ratio at large bending across sample points.
    let det_samples = cfg.param("det_samples", 12.0) as usize;
    let points = band_points(det_samples, opts.seed ^ 0x23);
    let mut ratios = Vec::new();
    let mut reports = Vec::new();
    for x in &points {
        let rep = bracket_rank_report(&model, x).map_err(|e| CliError::Numeric(e.to_string()))?;
        ratios.push(rep.det_ratio);
        reports.push(rep);
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    report.check("det_ratio_band", lo >= 0.9 && hi <= 1.1, lo.min(2.0 - hi));
    report.check(
        "rank_four",
        reports.iter().all(|r| r.rank4),
        reports
            .iter()
            .map(|r| r.singular_values[3] / r.singular_values[0])
            .fold(f64::INFINITY, f64::min),
    );

    // Cubic-variant leading coefficient vanishes on the diagonal circle.
    let xdiag = [3.0 / 2.0_f64.sqrt(), -3.0 / 2.0_f64.sqrt(), 0.0];
    let cubic = cubic_leading_coefficient(&frame.eval(&xdiag)).abs();
    report.check("cubic_variant_vanishes", cubic < 1e-8, cubic);

    // Doubling search for the bending constant over the requested ball.
    let per_axis = cfg.param("per_axis", if radius > 1.0 { 8.0 } else { 3.0 }) as usize;
    let budget = cfg.param("budget", 20.0) as usize;
    let minp = find_min_p(frame.clone(), radius, per_axis, budget)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    match minp.p_star {
        Some(p_star) => {
            report.check("bending_constant_found", true, p_star);
            report.measure("p_star", p_star);
        }
        None => {
            return Err(CliError::Numeric(format!(
                "doubling search exhausted {budget} doublings over radius {radius}"
            )))
        }
    }
    report.measure("ball_samples", ball_grid(radius, per_axis).len() as f64);
    report.measure("min_singular_ratio", minp.min_singular_ratio);
    report.measure("radius", radius);

    // Artifacts: per-point records and a one-line summary.
    std::fs::create_dir_all(&opts.out)?;
    let file = cfg.output.csv.clone().unwrap_or("torus_points.csv".into());
    write_report_csv(&reports, &opts.out.join(&file))?;
    report.artifacts.push(file);
    let summary = format!(
        "{:.3e},{},{:.6e},{:.6e},{:.6e},{:.6e}",
        radius,
        minp.samples,
        minp.p_star.unwrap_or(f64::NAN),
        minp.min_singular_ratio,
        lo,
        hi
    );
    write_csv_artifact(
        &mut report,
        &opts.out,
        "torus_summary.csv",
        "radius,samples,p_star,min_singular_ratio,det_ratio_min,det_ratio_max",
        &[summary],
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

/// Run a scenario by subcommand name.
pub fn run(name: &str, opts: &Opts, cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    opts.install_thread_pool();
    match name {
        "hilbert" => run_hilbert(opts, cfg),
        "bishop" => run_bishop(opts, cfg),
        "disc-family" => run_disc_family(opts, cfg),
        "foliation" => run_foliation(opts, cfg),
        "check-condition" => run_check_condition(opts, cfg),
        "special-point" => run_special_point(opts, cfg),
        "envelope" => run_envelope(opts, cfg),
        "gauss" => run_gauss(opts, cfg),
        "torus" => run_torus(opts, cfg),
        other => Err(CliError::Config(format!("unknown scenario `{other}`"))),
    }
}

/// Names of all built-in scenarios, in dispatch order.
pub const SCENARIOS: [&str; 9] = [
    "hilbert",
    "bishop",
    "disc-family",
    "foliation",
    "check-condition",
    "special-point",
    "envelope",
    "gauss",
    "torus",
];
