//! Command-line harness: experiment configs, the train / transfer / chain /
//! certify / report subcommands, and their on-disk artifacts.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{CertifyOptions, ReportEntry, Summary};
pub use config::{ExperimentConfig, RawConfig, OUTPUT_DIR_ENV};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "crt",
    version,
    about = "Certified robustness transfer: train, transfer, certify, report"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model with standard or Gaussian-augmented training.
    Train(ExperimentArgs),
    /// Transfer robustness from a teacher checkpoint into a new student.
    Transfer(ExperimentArgs),
    /// Run the [link.N] transfers of a chain in order.
    Chain(ExperimentArgs),
    /// Certify a checkpoint on the test split and write a records CSV.
    Certify(CertifyArgs),
    /// Summarize records and timing files into metric reports.
    Report(ReportArgs),
}

/// Configuration input shared by all experiment commands. Flags override
/// the file; `--set section.key=value` overrides everything else.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment configuration file (a run manifest also works).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override any key, e.g. `--set train.epochs=5` or `--set link.2.seed=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub output_dir: Option<String>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub teacher: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    /// Zero the per-row wall times in certification output so reruns are
    /// byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Checkpoint to certify (default: <output_dir>/<name>.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Records CSV to write (default: <output_dir>/<name>.records.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Certify every stride-th test input.
    #[arg(long)]
    pub stride: Option<String>,
    /// Certification seed.
    #[arg(long)]
    pub certify_seed: Option<String>,
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `records=PATH[,timing=PATH]...[,label=NAME][,sigma=X][,role=baseline|candidate]`;
    /// repeat for each model. Several timing files add up (teacher plus
    /// student). Without roles the first run is the baseline.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[arg(long, default_value = "reports")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = crt_core::metrics::DEFAULT_GRID_STEP)]
    pub grid_step: f64,
}

impl ExperimentArgs {
    /// Loads the configuration file and applies flag and `--set` overrides.
    pub fn resolve(&self, output_dir_env: Option<&str>) -> CliResult<ExperimentConfig> {
        let mut raw = RawConfig::load(&self.config)?;
        let flags = [
            ("experiment.output_dir", &self.output_dir),
            ("experiment.name", &self.name),
            ("experiment.method", &self.method),
            ("experiment.arch", &self.arch),
            ("experiment.teacher", &self.teacher),
            ("experiment.workers", &self.workers),
            ("train.epochs", &self.epochs),
            ("train.seed", &self.seed),
            ("noise.sigma", &self.sigma),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                raw.set(&format!("{key}={v}"))?;
            }
        }
        if self.deterministic {
            raw.set("experiment.deterministic=true")?;
        }
        for s in &self.set {
            raw.set(s)?;
        }
        ExperimentConfig::resolve(&raw, output_dir_env)
    }
}

fn env_output_dir() -> Option<String> {
    std::env::var(OUTPUT_DIR_ENV).ok()
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> CliResult<Summary> {
    let env = env_output_dir();
    match &cli.command {
        Command::Train(a) => commands::cmd_train(&a.resolve(env.as_deref())?),
        Command::Transfer(a) => commands::cmd_transfer(&a.resolve(env.as_deref())?),
        Command::Chain(a) => commands::cmd_chain(&a.resolve(env.as_deref())?),
        Command::Certify(a) => {
            let mut exp = a.experiment.resolve(env.as_deref())?;
            if let Some(s) = &a.stride {
                exp.stride = s.parse().ok().filter(|v| *v >= 1).ok_or_else(|| {
                    CliError::field("smoothing.stride", format!("expected an integer >= 1, got {s:?}"))
                })?;
            }
            if let Some(s) = &a.certify_seed {
                exp.certify_seed = s
                    .parse()
                    .map_err(|_| CliError::field("smoothing.seed", format!("expected an integer, got {s:?}")))?;
            }
            let opts = CertifyOptions {
                checkpoint: a.checkpoint.clone(),
                out: a.out.clone(),
                stop_after: a.stop_after,
            };
            commands::cmd_certify(&exp, &opts)
        }
        Command::Report(a) => {
            let entries = a
                .runs
                .iter()
                .map(|r| ReportEntry::parse(r))
                .collect::<CliResult<Vec<_>>>()?;
            commands::cmd_report(&entries, &a.out_dir, a.grid_step)
        }
    }
}

/// Parses `args`, runs the command, prints its outcome and returns the
/// process exit code (0 ok, 2 configuration or input error, 3 runtime
/// failure).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { error::EXIT_INPUT } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            for note in &summary.notes {
                eprintln!("{note}");
            }
            print!("{}", summary.output);
            for f in &summary.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
