//! One module per subcommand.

pub mod demo;
pub mod dump_pst;
pub mod evaluate;
pub mod fit_btm;
pub mod ingest;
pub mod recommend;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use taskrec_core::persist::ModelKind;
use taskrec_core::Vocabulary;

use crate::data::DataDir;
use crate::error::CliError;

/// Location of the prepared data directory.
#[derive(clap::Args, Clone, Debug)]
pub struct DataArgs {
    /// Data directory written by `ingest`
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Model directory (defaults to <DATA>/models)
    #[arg(long, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
}

impl DataArgs {
    pub fn dir(&self) -> DataDir {
        DataDir::new(&self.data, self.model_dir.as_deref())
    }
}

/// Trainable model names, as accepted on the command line.
pub const TRAINABLE: [&str; 8] = [
    "firstmm",
    "pst",
    "taskpst",
    "vrnn",
    "taskrnn",
    "jtcrnn",
    "help-rf",
    "help-lstm",
];

pub fn parse_trainable(name: &str) -> Result<ModelKind, String> {
    ModelKind::parse(name)
        .filter(|k| *k != ModelKind::Btm)
        .ok_or_else(|| format!("expected one of {}", TRAINABLE.join(", ")))
}

pub fn parse_recommender(name: &str) -> Result<ModelKind, String> {
    parse_trainable(name)?
        .is_recommender()
        .then(|| ModelKind::parse(name).expect("parsed"))
        .ok_or_else(|| format!("expected one of {}", TRAINABLE[..6].join(", ")))
}

pub fn parse_help_model(name: &str) -> Result<ModelKind, String> {
    match ModelKind::parse(name) {
        Some(k) if k.is_help() => Ok(k),
        _ => Err("expected help-rf or help-lstm".to_string()),
    }
}

/// Error for a command name outside the vocabulary, with close matches.
pub fn unknown_command(vocab: &Vocabulary, name: &str) -> CliError {
    CliError::validation(format!(
        "unknown command `{name}` (did you mean: {}?)",
        vocab.suggest(name, 3).join(", ")
    ))
}
