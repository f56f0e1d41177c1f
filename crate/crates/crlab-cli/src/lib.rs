//! Scenario runner for the `crlab` numerical laboratory.
//!
//! Each subcommand wraps one module of the library into a named scenario:
//! it builds the geometry (from a built-in model or a JSON config), runs
//! the module's checks, and emits a deterministic JSON report plus
//! plot-ready CSV artifacts.  Exit codes: 0 all checks pass, 1 a check
//! failed, 2 usage or config error, 3 numeric nonconvergence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub mod scenarios;

// ---------------------------------------------------------------------------
// errors and exit codes
// ---------------------------------------------------------------------------

/// Runner-level failures, partitioned by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad usage, unparsable or invalid config, I/O trouble — exit 2.
    Config(String),
    /// A solver or search failed to converge — exit 3.
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

// ---------------------------------------------------------------------------
// global options
// ---------------------------------------------------------------------------

/// Options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Opts {
    pub seed: u64,
    /// Grid resolution; each scenario documents its interpretation
    /// (circle nodes, box nodes per axis, …).
    pub grid: usize,
    pub tol: f64,
    /// Worker threads for the parallel sub-computations; 0 keeps the
    /// default.  Results never depend on the thread count.
    pub jobs: usize,
    /// Output directory for reports and artifacts.
    pub out: PathBuf,
}

impl Default for Opts {
    fn default() -> Self {
        Self {
            seed: 7,
            grid: 512,
            tol: 1e-10,
            jobs: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl Opts {
    /// Install the requested rayon fan-out; silently keeps the existing
    /// pool when one was already built.
    pub fn install_thread_pool(&self) {
        if self.jobs > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build_global();
        }
    }
}

// ---------------------------------------------------------------------------
// scenario configuration
// ---------------------------------------------------------------------------

/// A polynomial in several real variables given by explicit terms
/// `[coefficient, [exponents…]]`.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<(f64, Vec<usize>)>,
}

impl Polynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, exps)| {
                c * exps
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| x.get(i).copied().unwrap_or(0.0).powi(e as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

/// The geometry block of a scenario config: either a built-in model id or
/// explicit polynomial components.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Identifier of a built-in model (documented per subcommand).
    pub builtin: Option<String>,
    /// Graph components as polynomials in the base coordinates.
    pub h: Option<Vec<Polynomial>>,
}

/// The operation block: an operation id plus named numeric parameters.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpConfig {
    pub id: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// The output block: artifact file names, relative to the output
/// directory.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub json: Option<String>,
    pub csv: Option<String>,
}

/// A scenario config file.  `schema` must equal 1.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub name: Option<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub op: OpConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema: 1,
            name: None,
            model: ModelConfig::default(),
            op: OpConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Load and validate a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema != 1 {
            return Err(CliError::Config(format!(
                "{}: unsupported schema {} (expected 1)",
                path.display(),
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn param(&self, name: &str, default: f64) -> f64 {
        self.op.params.get(name).copied().unwrap_or(default)
    }
}

// ---------------------------------------------------------------------------
// run reports
// ---------------------------------------------------------------------------

/// One named check with its measured margin or residual.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
}

/// The deterministic outcome of a scenario: checks, measured constants,
/// and the artifact manifest.  Wall time is reported on stderr only, so
/// that reruns with identical config and seed are byte-identical.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub scenario: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub measured: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Self {
            schema: 1,
            scenario: scenario.into(),
            seed,
            checks: Vec::new(),
            measured: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, pass: bool, measured: f64) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            measured,
        });
    }

    pub fn measure(&mut self, name: &str, value: f64) {
        self.measured.insert(name.into(), value);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Serialize to pretty JSON (stable field and map ordering).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Write the JSON report under the output directory and record it in
    /// the artifact manifest.
    pub fn write_json(&mut self, out_dir: &Path, file: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(file);
        let recorded = file.to_string();
        self.artifacts.push(recorded);
        std::fs::write(&path, self.to_json())?;
        Ok(())
    }
}

/// Write CSV text under the output directory; emits the header line even
/// for an empty body.
pub fn write_csv_artifact(
    report: &mut RunReport,
    out_dir: &Path,
    file: &str,
    header: &str,
    rows: &[String],
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(out_dir.join(file), text)?;
    report.artifacts.push(file.to_string());
    Ok(())
}
