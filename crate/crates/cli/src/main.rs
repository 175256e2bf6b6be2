//! `fage`: synthesize, train, age, evaluate and interpolate face embeddings.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for data
//! and I/O errors. `FAGE_LOG` sets the log filter (default `warn`).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{AgeOpts, EvalOpts, InterpOpts, SynthOpts, TrainOpts};

/// Error caused by the command line or config file rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "fage", version, about = "Age progression of face embeddings")]
struct Cli {
    /// TOML file with per-command defaults; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic longitudinal dataset and its ground truth
    Synth(SynthOpts),
    /// Train an aging model on all within-subject pairs of a dataset
    Train(TrainOpts),
    /// Progress every record of a dataset to a target age
    Age(AgeOpts),
    /// Identification and verification metrics, optionally with aging and k folds
    Eval(EvalOpts),
    /// Move records along the cohort-mean attribute vector
    Interp(InterpOpts),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(o) => commands::synth(o.resolve(file.synth)),
        Command::Train(o) => commands::train(o.resolve(file.train)),
        Command::Age(o) => commands::age(o.resolve(file.age)),
        Command::Eval(o) => commands::eval(o.resolve(file.eval)),
        Command::Interp(o) => commands::interp(o.resolve(file.interp)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
