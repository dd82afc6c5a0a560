//! Command-line front end: parses a configuration, dispatches the experiment
//! and writes the run manifest.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use wigner_core::experiments::{resolve_out_dir, run_experiment, ExperimentConfig, ExperimentKind, RunOptions};
use wigner_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_GATE: i32 = 4;

/// Environment variable overriding the configured output directory.
pub const OUT_ENV: &str = "WIGNER_GAPS_OUT";

pub const MANIFEST: &str = "manifest.json";
const PARTIAL_MANIFEST: &str = "manifest.partial.json";

#[derive(Debug, Parser)]
#[command(name = "wigner-gaps", version, about = "Extremal eigenvalue-gap experiments for generalized Wigner matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample spectra; rigidity, delocalization and local-law reports.
    Spectrum(RunArgs),
    /// Extremal gaps and their smooth surrogates.
    Gaps(RunArgs),
    /// Regularized eigenvalues.
    Regularize(RunArgs),
    /// Four-moment comparison, single-entry swap probe, or Wegner probe.
    Compare(RunArgs),
    /// Matrix flow comparison or coupled particle flows.
    Flow(RunArgs),
    /// Maximal-gap limit and fluctuations.
    Universality(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent trials; outputs do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Run even when a precondition gate (moment match, flow-time window) fails.
    #[arg(long)]
    pub override_gates: bool,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Gaps(_) => "gaps",
            Command::Regularize(_) => "regularize",
            Command::Compare(_) => "compare",
            Command::Flow(_) => "flow",
            Command::Universality(_) => "universality",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Spectrum(a)
            | Command::Gaps(a)
            | Command::Regularize(a)
            | Command::Compare(a)
            | Command::Flow(a)
            | Command::Universality(a) => a,
        }
    }

    fn accepts(&self, kind: &ExperimentKind) -> bool {
        matches!(
            (self, kind),
            (Command::Spectrum(_), ExperimentKind::Spectrum { .. })
                | (Command::Gaps(_), ExperimentKind::Gaps)
                | (Command::Regularize(_), ExperimentKind::Regularize { .. })
                | (Command::Compare(_), ExperimentKind::Compare)
                | (Command::Compare(_), ExperimentKind::Lindeberg { .. })
                | (Command::Compare(_), ExperimentKind::Wegner { .. })
                | (Command::Flow(_), ExperimentKind::Flow { .. })
                | (Command::Flow(_), ExperimentKind::Coupling { .. })
                | (Command::Universality(_), ExperimentKind::Universality { .. })
        )
    }
}

/// Record of one run, written atomically once every output exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub experiment: String,
    /// SHA-256 of the effective configuration in canonical JSON.
    pub config_hash: String,
    pub base_seed: u64,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    /// Output files relative to the output directory, sorted.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PartialManifest {
    subcommand: String,
    config_hash: String,
    base_seed: u64,
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct Completed {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
    pub summary_path: PathBuf,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Precondition(_) => EXIT_GATE,
            e if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: msg.into() }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("configuration serializes");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_default()
}

fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

fn list_outputs(dir: &Path) -> std::io::Result<Vec<String>> {
    let mut files: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|f| f != MANIFEST && f != PARTIAL_MANIFEST)
        .collect();
    files.sort();
    Ok(files)
}

/// Runs one subcommand and writes its manifest.
pub fn execute(cli: &Cli, env_out: Option<&str>) -> Result<Completed, Failure> {
    let args = cli.command.args();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| config_error(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if !cli.command.accepts(&cfg.experiment) {
        return Err(config_error(format!(
            "experiment kind '{}' cannot be run by the '{}' subcommand",
            cfg.experiment.name(),
            cli.command.name()
        )));
    }
    let workers = args
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if workers == 0 {
        return Err(config_error("--workers must be at least 1"));
    }
    let out_dir = resolve_out_dir(args.out_dir.as_deref(), env_out, &cfg);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| config_error(format!("cannot create {}: {e}", out_dir.display())))?;
    let hash = config_hash(&cfg);
    let partial = PartialManifest { subcommand: cli.command.name().into(), config_hash: hash.clone(), base_seed: cfg.base_seed };
    let partial_path = out_dir.join(PARTIAL_MANIFEST);
    let resume = std::fs::read_to_string(&partial_path)
        .ok()
        .and_then(|s| serde_json::from_str::<PartialManifest>(&s).ok())
        .is_some_and(|p| p == partial);
    let io = |e: std::io::Error| Failure::from(Error::Io(e));
    write_atomic(&partial_path, &serde_json::to_vec_pretty(&partial).expect("serializes")).map_err(io)?;
    let started_at = now();
    let mut effective = serde_json::to_string_pretty(&cfg).expect("configuration serializes");
    effective.push('\n');
    std::fs::write(out_dir.join("config.json"), effective).map_err(io)?;
    let opts = RunOptions { out_dir: out_dir.clone(), workers, override_gates: args.override_gates, resume };
    let report = run_experiment(&cfg, &opts)?;
    let manifest = RunManifest {
        subcommand: cli.command.name().into(),
        experiment: cfg.experiment.name().into(),
        config_hash: hash,
        base_seed: cfg.base_seed,
        code_version: env!("CARGO_PKG_VERSION").into(),
        started_at,
        finished_at: now(),
        files: list_outputs(&out_dir).map_err(io)?,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&out_dir.join(MANIFEST), &json).map_err(io)?;
    std::fs::remove_file(&partial_path).map_err(io)?;
    Ok(Completed { manifest, out_dir, summary_path: report.summary_path })
}

/// Parses arguments, runs, reports on stderr/stdout and returns the exit code.
pub fn run<I, T>(argv: I, env_out: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, env_out) {
        Ok(done) => {
            let m = &done.manifest;
            if let Ok(summary) = std::fs::read_to_string(&done.summary_path) {
                print!("{summary}");
            }
            eprintln!(
                "{}: wrote {} files to {} (config {})",
                m.subcommand,
                m.files.len(),
                done.out_dir.display(),
                &m.config_hash[..12]
            );
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
