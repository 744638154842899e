mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;

/// Mixed-precision bit-width search over a pruned, adapter-tuned toy model.
#[derive(Parser)]
#[command(name = "mixq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Prune the pretrained model and store the result.
    Prune {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate one bit-width config, appending it to the tune log.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Per-layer bit-widths, e.g. 4848.
        #[arg(long)]
        bits: String,
    },
    /// Run the surrogate-guided search.
    Search {
        #[command(flatten)]
        common: Common,
        /// Trade-off weight (overrides the config).
        #[arg(long)]
        lambda: Option<f64>,
        /// Continue from an existing records log instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Emit scatter data and the selected config for a records log.
    Report {
        /// A records or tune log.
        log: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Directory for the report files (defaults to the log's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::Prune { common } => commands::cmd_prune(&Context::new(&common.config, common.seed, None, common.out)?),
        Command::Tune { common, bits } => {
            commands::cmd_tune(&Context::new(&common.config, common.seed, None, common.out)?, &bits)
        }
        Command::Search { common, lambda, resume } => {
            commands::cmd_search(&Context::new(&common.config, common.seed, lambda, common.out)?, resume)
        }
        Command::Report { log, lambda, out } => commands::cmd_report(&log, lambda, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
