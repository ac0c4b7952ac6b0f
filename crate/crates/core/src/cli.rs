//! `lsa-lab` command line.
//!
//! Settings come from flags, then an optional JSON `--config` file, then the
//! built-in defaults, in that order of precedence. Every config is validated
//! before anything is computed, and output is written only once the whole
//! result is in memory.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::experiments::{
    self, ConditionConfig, ExperimentError, LayerSweepConfig, StationarySweepConfig,
};
use crate::model::ScaleScheme;
use crate::oracle::DynamicsMode;
use crate::taskgen::GenSpec;
use crate::verify::{self, SuiteConfig, VerifyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lsa-lab", version, about = "Linear self-attention in-context learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Per-layer context/query MSE of the constructed stack (CSV)
    LayerSweep,
    /// Query MSE of causal stationary points against the number of examples (CSV)
    StationarySweep,
    /// Run the verification suite (JSON report, exit 1 on failure)
    Verify,
    /// Condition numbers of T, S and X Xᵀ (CSV)
    ConditionReport,
    /// Write generated tasks as JSON fixtures
    ExportTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Prefix,
    Causal,
    Causal2,
}

impl From<ModeArg> for DynamicsMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Prefix => DynamicsMode::Prefix,
            ModeArg::Causal => DynamicsMode::Causal,
            ModeArg::Causal2 => DynamicsMode::Causal2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Causal,
    Causal2,
}

impl From<SchemeArg> for ScaleScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Causal => ScaleScheme::OverN,
            SchemeArg::Causal2 => ScaleScheme::OverJ,
        }
    }
}

/// Flags shared by all subcommands; each one ignores the flags it has no use for.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Number of sequences (verify: random instances per check)
    #[arg(long, global = true)]
    pub sequences: Option<usize>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long = "mode", value_enum, global = true)]
    pub modes: Vec<ModeArg>,
    #[arg(long = "scheme", value_enum, global = true)]
    pub schemes: Vec<SchemeArg>,
    #[arg(long = "mu-x", value_delimiter = ',', global = true, allow_negative_numbers = true)]
    pub mu_x: Vec<f64>,
    #[arg(long = "n-list", value_delimiter = ',', global = true)]
    pub n_list: Vec<usize>,
    /// Output path; stdout when omitted
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file with default values for any of the flags
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Restrict verify to these check ids
    #[arg(long = "check", global = true)]
    pub checks: Vec<String>,
    /// Override every verify tolerance
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
}

/// Contents of a `--config` file. Field names follow the long flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub sequences: Option<usize>,
    pub eta: Option<f64>,
    pub layers: Option<usize>,
    #[serde(alias = "modes")]
    pub mode: Option<Vec<ModeArg>>,
    #[serde(alias = "schemes")]
    pub scheme: Option<Vec<SchemeArg>>,
    pub mu_x: Option<Vec<f64>>,
    pub n_list: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(alias = "checks")]
    pub check: Option<Vec<String>>,
    pub tolerance: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    InvalidConfig(String),
    Io(String),
    /// Computation failed after validation.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig(_) => EXIT_INVALID_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Run(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::InvalidConfig(m) => write!(f, "invalid config: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidConfig(m) => CliError::InvalidConfig(m),
            ExperimentError::Task(crate::taskgen::TaskError::InvalidSpec(m)) => CliError::InvalidConfig(m),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::UnknownCheck(_) | VerifyError::Precondition(_) => CliError::InvalidConfig(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

/// Flags merged over the config file.
#[derive(Debug, Clone)]
pub struct Resolved {
    flags: Flags,
    file: FileConfig,
}

impl Resolved {
    pub fn new(flags: Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => load_config(path)?,
            None => FileConfig::default(),
        };
        Ok(Self { flags, file })
    }

    fn seed(&self) -> u64 {
        self.flags.seed.or(self.file.seed).unwrap_or(0)
    }
    fn d(&self, default: usize) -> usize {
        self.flags.d.or(self.file.d).unwrap_or(default)
    }
    fn n(&self, default: usize) -> usize {
        self.flags.n.or(self.file.n).unwrap_or(default)
    }
    fn m(&self, default: usize) -> usize {
        self.flags.m.or(self.file.m).unwrap_or(default)
    }
    fn sequences(&self, default: usize) -> usize {
        self.flags.sequences.or(self.file.sequences).unwrap_or(default)
    }
    fn list<T: Clone>(flag: &[T], file: &Option<Vec<T>>, default: Vec<T>) -> Vec<T> {
        if !flag.is_empty() {
            flag.to_vec()
        } else {
            file.clone().unwrap_or(default)
        }
    }
    pub fn out(&self) -> Option<PathBuf> {
        self.flags.out.clone().or_else(|| self.file.out.clone())
    }
    pub fn workers(&self) -> usize {
        self.flags.workers.or(self.file.workers).unwrap_or(0)
    }

    pub fn layer_sweep(&self) -> LayerSweepConfig {
        let def = LayerSweepConfig::default();
        let modes = Self::list(&self.flags.modes, &self.file.mode, vec![]);
        LayerSweepConfig {
            seed: self.seed(),
            d: self.d(def.d),
            n: self.n(def.n),
            m: self.m(def.m),
            sequences: self.sequences(def.sequences),
            eta: self.flags.eta.or(self.file.eta).unwrap_or(def.eta),
            layers: self.flags.layers.or(self.file.layers).unwrap_or(def.layers),
            modes: if modes.is_empty() {
                def.modes
            } else {
                modes.into_iter().map(Into::into).collect()
            },
        }
    }

    pub fn stationary_sweep(&self) -> StationarySweepConfig {
        let def = StationarySweepConfig::default();
        let schemes = Self::list(&self.flags.schemes, &self.file.scheme, vec![]);
        StationarySweepConfig {
            seed: self.seed(),
            d: self.d(def.d),
            m: self.m(def.m),
            sequences: self.sequences(def.sequences),
            schemes: if schemes.is_empty() {
                def.schemes
            } else {
                schemes.into_iter().map(Into::into).collect()
            },
            mu_x: Self::list(&self.flags.mu_x, &self.file.mu_x, def.mu_x),
            n_list: Self::list(&self.flags.n_list, &self.file.n_list, def.n_list),
        }
    }

    pub fn condition(&self) -> ConditionConfig {
        let def = ConditionConfig::default();
        let mu = Self::list(&self.flags.mu_x, &self.file.mu_x, vec![def.mu_x]);
        ConditionConfig {
            seed: self.seed(),
            d: self.d(def.d),
            sequences: self.sequences(def.sequences),
            mu_x: mu[0],
            n_list: Self::list(&self.flags.n_list, &self.file.n_list, def.n_list),
        }
    }

    pub fn suite(&self) -> Result<SuiteConfig, CliError> {
        let def = SuiteConfig::default();
        let checks = Self::list(&self.flags.checks, &self.file.check, vec![]);
        let tolerance = self.flags.tolerance.or(self.file.tolerance);
        if let Some(t) = tolerance {
            if t.is_nan() || t < 0.0 {
                return Err(CliError::InvalidConfig("tolerance must be non-negative".into()));
            }
        }
        let instances = self.sequences(def.instances);
        if instances == 0 {
            return Err(CliError::InvalidConfig("need at least one instance".into()));
        }
        Ok(SuiteConfig {
            seed: self.seed(),
            instances,
            tolerance,
            checks: if checks.is_empty() { None } else { Some(checks) },
            ..def
        })
    }

    pub fn export(&self) -> GenSpec {
        let def = GenSpec::default();
        let mu = Self::list(&self.flags.mu_x, &self.file.mu_x, vec![def.mu_x]);
        GenSpec {
            seed: self.seed(),
            d: self.d(def.d),
            n: self.n(def.n),
            m: self.m(def.m),
            mu_x: mu[0],
            num_sequences: self.sequences(def.num_sequences),
        }
    }
}

fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => io::stdout()
            .lock()
            .write_all(contents.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn pooled<T: Send>(workers: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    experiments::with_workers(workers, f)?
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lsa-lab: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let resolved = Resolved::new(cli.flags)?;
    let workers = resolved.workers();
    let out = resolved.out();
    match cli.command {
        Command::LayerSweep => {
            let cfg = resolved.layer_sweep();
            cfg.validate()?;
            let csv = pooled(workers, || Ok(experiments::layer_sweep(&cfg)?.to_csv()))?;
            write_output(out.as_deref(), &csv)?;
            Ok(EXIT_OK)
        }
        Command::StationarySweep => {
            let cfg = resolved.stationary_sweep();
            cfg.validate()?;
            let csv = pooled(workers, || Ok(experiments::stationary_sweep(&cfg)?.to_csv()))?;
            write_output(out.as_deref(), &csv)?;
            Ok(EXIT_OK)
        }
        Command::ConditionReport => {
            let cfg = resolved.condition();
            cfg.validate()?;
            let report = pooled(workers, || Ok(experiments::condition_report(&cfg)?))?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_output(out.as_deref(), &report.to_csv())?;
            Ok(EXIT_OK)
        }
        Command::Verify => {
            let cfg = resolved.suite()?;
            let report = pooled(workers, || Ok(verify::run_suite(&cfg)?))?;
            let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Run(e.to_string()))?;
            json.push('\n');
            write_output(out.as_deref(), &json)?;
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "FAIL {}: max error {:e} > tolerance {:e}",
                    c.check_id, c.max_abs_err, c.tolerance
                );
            }
            Ok(if report.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::ExportTask => {
            let spec = resolved.export();
            spec.validate().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            let mut json = experiments::export_tasks(&spec)?;
            json.push('\n');
            write_output(out.as_deref(), &json)?;
            Ok(EXIT_OK)
        }
    }
}
