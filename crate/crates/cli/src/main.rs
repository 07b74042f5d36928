//! `tse`: simulate data, train, evaluate and report target speech
//! extraction systems from one TOML config.

mod commands;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tse_core::training::LossMode;
use tse_core::TseError;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 2.
    Usage(String),
    /// Anything that went wrong while doing the work; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl From<TseError> for CliError {
    fn from(e: TseError) -> Self {
        match e {
            TseError::Config(_) | TseError::Parse { .. } | TseError::SubsetTooLarge { .. } | TseError::LabelOutOfRange { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tse", version, about = "Target speech extraction with enrollment-robust training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for both data generation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory, overriding `paths.workdir`.
    #[arg(long, value_name = "PATH")]
    pub workdir: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus, mixtures and manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one system and write its checkpoints and history log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_loss_mode)]
        loss_mode: Option<LossMode>,
        /// Name of the system directory; defaults to the loss mode.
        #[arg(long)]
        name: Option<String>,
        /// Override `train.total_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the system's last checkpoint.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
    },
    /// Evaluate a checkpoint with every enrollment candidate.
    Eval {
        #[command(flatten)]
        common: Common,
        /// System name; its best checkpoint is evaluated.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_parser = parse_loss_mode)]
        loss_mode: Option<LossMode>,
        /// Explicit checkpoint file instead of a system name.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "eval", value_parser = ["train", "dev", "eval"])]
        split: String,
    },
    /// Compare evaluated systems: tables and box-plot data.
    Report {
        #[command(flatten)]
        common: Common,
        /// Evaluation matrices; defaults to every matrix in the eval directory.
        matrices: Vec<PathBuf>,
    },
    /// Finite-difference check of every training loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parameters probed per loss.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = tse_core::training::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

fn parse_loss_mode(s: &str) -> Result<LossMode, String> {
    s.parse().map_err(|e: TseError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("TSE_LOG", "info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common } => commands::simulate(&common),
        Command::Train {
            common,
            loss_mode,
            name,
            epochs,
            resume,
        } => commands::train(&common, loss_mode, name, epochs, resume),
        Command::Eval {
            common,
            name,
            loss_mode,
            checkpoint,
            split,
        } => commands::eval(&common, name, loss_mode, checkpoint, &split),
        Command::Report { common, matrices } => commands::report(&common, &matrices),
        Command::Gradcheck {
            seed,
            samples,
            tolerance,
        } => commands::gradcheck(seed, samples, tolerance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
