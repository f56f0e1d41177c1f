//! `crlab` — scenario runner for the numerical laboratory.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config
//! error, 3 numeric nonconvergence.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crlab_cli::{scenarios, CliError, Opts, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "crlab",
    version,
    about = "Scenario runner for the crlab numerical laboratory"
)]
struct Cli {
    /// Seed of every random sub-computation.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Grid resolution (circle nodes; must be a power of two ≥ 8).
    #[arg(long, global = true, default_value_t = 512)]
    grid: usize,
    /// Tolerance of the residual checks.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol: f64,
    /// Worker threads (0 keeps the default pool).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory for reports and artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON scenario config overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Harmonic-conjugate identities on the circle.
    Hilbert,
    /// Bishop-equation solver checks.
    Bishop,
    /// Half-attached disc families and their cones.
    DiscFamily,
    /// Characteristic foliation of the hyperbolic model.
    Foliation,
    /// The four removability-condition verdicts.
    CheckCondition,
    /// Special-point sweep against the brute-force oracle.
    SpecialPoint,
    /// Continuity-principle coverage of the two-piece figure.
    Envelope,
    /// Gauss-kernel approximation on a tilted slice.
    Gauss,
    /// Torus bending verification (frame identities, brackets, P*).
    Torus {
        /// Ball radius of the doubling search.
        #[arg(long)]
        radius: Option<f64>,
    },
}

impl Command {
    fn scenario_name(&self) -> &'static str {
        match self {
            Command::Hilbert => "hilbert",
            Command::Bishop => "bishop",
            Command::DiscFamily => "disc-family",
            Command::Foliation => "foliation",
            Command::CheckCondition => "check-condition",
            Command::SpecialPoint => "special-point",
            Command::Envelope => "envelope",
            Command::Gauss => "gauss",
            Command::Torus { .. } => "torus",
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let opts = Opts {
        seed: cli.seed,
        grid: cli.grid,
        tol: cli.tol,
        jobs: cli.jobs,
        out: cli.out.clone(),
    };
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Command::Torus { radius: Some(r) } = &cli.command {
        cfg.op.params.insert("radius".into(), *r);
    }
    let name = cli.command.scenario_name();
    let started = Instant::now();
    let mut report = scenarios::run(name, &opts, &cfg)?;

    let json_name = cfg
        .output
        .json
        .clone()
        .unwrap_or_else(|| format!("{}_report.json", report.scenario.replace('-', "_")));
    report.write_json(&opts.out, &json_name)?;

    for check in &report.checks {
        println!(
            "CHECK {}: {} ({:.6e})",
            check.name,
            if check.pass { "PASS" } else { "FAIL" },
            check.measured
        );
    }
    println!(
        "REPORT {} -> {}",
        report.scenario,
        opts.out.join(&json_name).display()
    );
    eprintln!("wall time: {:.2?}", started.elapsed());
    Ok(report.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
