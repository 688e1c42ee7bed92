//! Pipeline driver: dataset generation, predictor fit, invariant set,
//! closed-loop simulation, and artifact verification, each as a subcommand
//! reading one shared config file.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;

/// Failures grouped by exit code: 2 validation, 3 numerical or infeasible,
/// 4 iteration budget exhausted.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    NonConvergence(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg)
            | CliError::Numerical(msg)
            | CliError::NonConvergence(msg) => f.write_str(msg),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "dcbf", version, about = "Data-driven safety filter pipeline")]
struct Cli {
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the command-relevant seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Excite the plant and write the identification dataset
    GenerateData,
    /// Fit the one-step predictor from the dataset
    BuildModel {
        /// Dataset CSV (default: <out>/dataset.csv)
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compute the maximal certified set by backward iteration
    InvariantSet {
        /// Model JSON (default: <out>/model.json)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the closed loop with the safety filter and log the trace
    Simulate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Certified set JSON (default: <out>/invariant_set.json)
        #[arg(long)]
        set: Option<PathBuf>,
    },
    /// Check invariance, barrier sign conditions, and filter equivalences
    Verify {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        set: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, config_hash) = Config::load(&cli.config)?;
    let out = cli.out.unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| {
        CliError::Validation(format!("cannot create output dir {}: {e}", out.display()))
    })?;
    let ctx = commands::Ctx {
        cfg,
        config_hash,
        seed: cli.seed,
        out,
    };
    match cli.command {
        Command::GenerateData => commands::generate_data(&ctx),
        Command::BuildModel { dataset } => commands::build_model(&ctx, dataset),
        Command::InvariantSet { model } => commands::invariant_set_cmd(&ctx, model),
        Command::Simulate { model, set } => commands::simulate(&ctx, model, set),
        Command::Verify { model, set } => commands::verify(&ctx, model, set),
    }
}
