//! `taskrec`: ingest usage logs, fit task and recommendation models,
//! evaluate them and try them out in an interactive session.

mod cmd;
mod data;
mod error;
mod knobs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::data::Output;
use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(
    name = "taskrec",
    version,
    about = "Task-aware command recommendation and proactive help"
)]
struct Cli {
    /// Flat JSON file of hyperparameters; flags take precedence over it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Suppress the JSONL progress stream
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with planted tasks and help sessions
    Synth(cmd::synth::Args),
    /// Turn a raw JSONL event log into a prepared data directory
    Ingest(cmd::ingest::Args),
    /// Fit the biterm task model on the training sequences
    FitBtm(cmd::fit_btm::Args),
    /// Train one recommender or help model
    Train(cmd::train::Args),
    /// Evaluate saved models, or retrain and evaluate over seeded runs
    Evaluate(cmd::evaluate::Args),
    /// Recommend next commands for prefixes read line by line
    Recommend(cmd::recommend::Args),
    /// Interactive session with live recommendations and help alerts
    Demo(cmd::demo::Args),
    /// Print a fitted suffix tree
    DumpPst(cmd::dump_pst::Args),
}

fn run(cli: Cli) -> CliResult<()> {
    let out = Output::new(cli.quiet);
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => cmd::synth::run(a, config, &out),
        Command::Ingest(a) => cmd::ingest::run(a, config, &out),
        Command::FitBtm(a) => cmd::fit_btm::run(a, config, &out),
        Command::Train(a) => cmd::train::run(a, config, &out),
        Command::Evaluate(a) => cmd::evaluate::run(a, config, &out),
        Command::Recommend(a) => cmd::recommend::run(a, config, &out),
        Command::Demo(a) => cmd::demo::run(a, config, &out),
        Command::DumpPst(a) => cmd::dump_pst::run(a, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
