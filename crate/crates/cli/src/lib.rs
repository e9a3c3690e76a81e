//! Command-line driver: runs the covariance, learning, scale-scan, surrogate
//! and gradient-check pipelines from a JSON [`RunConfig`], writing plot-ready
//! CSV/JSON artifacts plus a `manifest.json`.
//!
//! Commands compute every artifact in memory first; nothing is written if
//! the configuration or an input artifact is invalid.

pub mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use commands::{run_command, Artifact, Outcome};
pub use config::{Command, RunConfig};

/// Why a run stopped; each kind has its own exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// Invalid configuration (exit 2).
    Config(String),
    /// A simulation left the finite domain (exit 3).
    Divergence(String),
    /// The normality gate rejected the samples (exit 4).
    Normality(String),
    /// An input file is missing or unreadable (exit 5).
    MissingArtifact(String),
    /// Anything else, including a failed gradient check (exit 1).
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Divergence(_) => 3,
            Failure::Normality(_) => 4,
            Failure::MissingArtifact(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Divergence(m) | Failure::Normality(m) | Failure::MissingArtifact(m) | Failure::Other(m) => m,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl From<effpot_core::Error> for Failure {
    fn from(e: effpot_core::Error) -> Self {
        use effpot_core::Error as E;
        let msg = e.to_string();
        match e.root() {
            E::Config(_) => Failure::Config(msg),
            E::Divergence { .. } => Failure::Divergence(msg),
            _ => Failure::Other(msg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub job: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub exit_code: i32,
    pub message: Option<String>,
}

/// Record of one run, written last as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub versions: BTreeMap<String, String>,
    /// Wall-clock time per stage (the only non-reproducible field).
    pub stages: Vec<StageTiming>,
    pub seeds: Vec<SeedRecord>,
    pub files: Vec<FileRecord>,
    pub warnings: Vec<String>,
    pub status: Status,
}

#[derive(Debug, Parser)]
#[command(name = "effpot", version, about = "Learn effective potentials from large-step damped dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Estimate the effective noise covariance Z by mass-matrix probing.
    EstimateCov(CommonArgs),
    /// Sample, gate and fit an effective potential.
    Learn(CommonArgs),
    /// Learn at a decreasing list of step sizes.
    ScaleScan(CommonArgs),
    /// Compare a surrogate model against the full potential.
    SurrogateCompare(CommonArgs),
    /// Compare analytic gradients with finite differences.
    GradientCheck(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "effpot-out")]
    pub out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "EFFPOT_JOBS")]
    pub jobs: Option<usize>,
}

impl CliCommand {
    fn split(&self) -> (Command, &CommonArgs) {
        match self {
            CliCommand::EstimateCov(a) => (Command::EstimateCov, a),
            CliCommand::Learn(a) => (Command::Learn, a),
            CliCommand::ScaleScan(a) => (Command::ScaleScan, a),
            CliCommand::SurrogateCompare(a) => (Command::SurrogateCompare, a),
            CliCommand::GradientCheck(a) => (Command::GradientCheck, a),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (cmd, a) = cli.command.split();
    let mut cfg = match RunConfig::load(&a.config) {
        Ok(c) => c,
        Err(f) => return report(&f),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    match execute(cmd, &cfg, &a.out, a.jobs) {
        Ok(done) => {
            if !done.summary.is_null() {
                println!("{}", serde_json::to_string_pretty(&done.summary).unwrap_or_default());
            }
            done.exit_code
        }
        Err(f) => report(&f),
    }
}

fn report(f: &Failure) -> i32 {
    eprintln!("error: {f}");
    f.exit_code()
}

/// A run that wrote its outputs, successful or not.
#[derive(Debug, Clone)]
pub struct Completed {
    pub exit_code: i32,
    pub summary: serde_json::Value,
}

/// Validates, runs `cmd` on a pool of `jobs` threads and writes the artifacts
/// and manifest to `out`. Errors before anything was written come back as
/// `Err`.
pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path, jobs: Option<usize>) -> Result<Completed, Failure> {
    if jobs == Some(0) {
        return Err(Failure::Config("--jobs: must be at least 1".into()));
    }
    cfg.validate(cmd)?;
    check_output_dir(out)?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build().map_err(|e| Failure::Other(format!("thread pool: {e}")))?;
    let result = pool.install(|| run_command(cmd, cfg));
    let outcome = match result {
        Ok(o) => o,
        // Input problems are detected before any simulation; nothing to write.
        Err(f @ (Failure::Config(_) | Failure::MissingArtifact(_))) => return Err(f),
        Err(f) => Outcome::failed(f),
    };
    write_outputs(cmd, cfg, out, &outcome)?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let exit_code = match &outcome.failure {
        Some(f) => report(f),
        None => 0,
    };
    Ok(Completed { exit_code, summary: outcome.summary })
}

fn check_output_dir(out: &Path) -> Result<(), Failure> {
    let mut probe = out;
    loop {
        if probe.exists() {
            let meta = std::fs::metadata(probe).map_err(|e| Failure::Config(format!("--out: {e}")))?;
            if !meta.is_dir() {
                return Err(Failure::Config(format!("--out: {} is not a directory", probe.display())));
            }
            if meta.permissions().readonly() {
                return Err(Failure::Config(format!("--out: {} is not writable", probe.display())));
            }
            return Ok(());
        }
        match probe.parent() {
            Some(p) if !p.as_os_str().is_empty() => probe = p,
            _ => return Ok(()),
        }
    }
}

fn write_outputs(cmd: Command, cfg: &RunConfig, out: &Path, outcome: &Outcome) -> Result<(), Failure> {
    let io = |e: std::io::Error, p: &Path| Failure::Other(format!("writing {}: {e}", p.display()));
    std::fs::create_dir_all(out).map_err(|e| io(e, out))?;
    let mut files = Vec::new();
    for a in &outcome.artifacts {
        let path = out.join(&a.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io(e, parent))?;
        }
        std::fs::write(&path, &a.bytes).map_err(|e| io(e, &path))?;
        files.push(FileRecord { path: a.path.clone(), bytes: a.bytes.len() as u64 });
    }
    let versions = BTreeMap::from([
        ("effpot-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("effpot-core".to_string(), effpot_core::VERSION.to_string()),
    ]);
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config: cfg.clone(),
        versions,
        stages: outcome.stages.clone(),
        seeds: outcome.seeds.clone(),
        files,
        warnings: outcome.warnings.clone(),
        status: Status {
            exit_code: outcome.failure.as_ref().map_or(0, Failure::exit_code),
            message: outcome.failure.as_ref().map(|f| f.message().to_string()),
        },
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Other(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| io(e, &path))
}
