//! `steerlab` — the attribute-intensity control pipeline as a CLI.
//!
//! Eight commands cover the full loop: synthesize a corpus, pretrain the
//! toy generator, collect scored rollouts, train the value function,
//! steer generations toward a target, map the attribute trade-off
//! frontier, distill steered behaviour back into the weights, and score
//! record files after the fact. One JSON config file drives everything;
//! `--seed` and `--out` override its seed and output directory.
//!
//! Exit codes: 0 on success, 1 for configuration or argument problems,
//! 2 for runtime failures (missing artifacts, corrupt inputs, numeric
//! breakdowns).

mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// A command failure, split by who must fix it.
#[derive(Debug)]
pub enum CliError {
    /// The config file or command line is wrong (exit 1).
    Validation(String),
    /// The run itself failed (exit 2).
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "steerlab",
    version,
    about = "Attribute-intensity control pipeline for a toy recurrent generator",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Path to the JSON run configuration (required by every command).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config's root seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (reserved; the numeric kernels are single-threaded,
    /// so any value above 1 currently changes nothing).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the synthetic training corpus.
    GenCorpus,
    /// Pretrain the generator on the corpus.
    Pretrain,
    /// Generate and score unsteered rollouts for value training.
    Rollout,
    /// Train the value function on the scored rollouts.
    TrainValue,
    /// Steer generations toward a raw-scale target and report metrics.
    Steer {
        /// Raw-scale target, one comma-separated value per attribute
        /// (e.g. "2,2,2").
        #[arg(long, value_name = "T0,T1,..")]
        target: String,
    },
    /// Map the trade-off frontier over the configured attribute pair.
    Pareto,
    /// Collect steered examples and fine-tune the generator on them.
    Distill,
    /// Score an existing base/steered record pair against a target.
    Eval {
        /// Unsteered records JSONL.
        #[arg(long, value_name = "FILE")]
        base: PathBuf,
        /// Steered records JSONL.
        #[arg(long, value_name = "FILE")]
        steered: PathBuf,
        /// Raw-scale target, one comma-separated value per attribute.
        #[arg(long, value_name = "T0,T1,..")]
        target: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; everything else is
            // a usage problem.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
            let _ = e.print();
            return code;
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.ok_or_else(|| {
        CliError::Validation("--config PATH is required; see configs/example.json".into())
    })?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
    }
    let cfg = RunConfig::load(&config_path, cli.seed, cli.out.as_deref())?;

    match cli.command {
        Command::GenCorpus => commands::gen_corpus(&cfg),
        Command::Pretrain => commands::pretrain(&cfg),
        Command::Rollout => commands::rollout(&cfg),
        Command::TrainValue => commands::train_value(&cfg),
        Command::Steer { target } => commands::steer(&cfg, &target),
        Command::Pareto => commands::pareto(&cfg),
        Command::Distill => commands::distill(&cfg),
        Command::Eval {
            base,
            steered,
            target,
        } => commands::eval(&cfg, &base, &steered, &target),
    }
}
