//! Layout of a prepared data directory and typed access to its files.
//!
//! ```text
//! <data>/vocab.json
//! <data>/{train,val,test}.jsonl            recommendation sequences
//! <data>/help_{train,val,test}.jsonl       labelled help examples
//! <data>/stats.json
//! <data>/models/<kind>.json
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use taskrec_core::experiment::{HelpModel, Recommender};
use taskrec_core::help::{HelpForest, HelpLstm};
use taskrec_core::markov::{FirstOrderModel, SuffixTree, TaskPstEnsemble};
use taskrec_core::nn::RecommenderNet;
use taskrec_core::persist::{load_model, save_model, ModelKind};
use taskrec_core::{BitermModel, CommandSequence, HelpExample, Vocabulary};

use crate::error::{CliError, CliResult, WithPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DataDir {
    pub root: PathBuf,
    pub models: PathBuf,
}

impl DataDir {
    pub fn new(root: &Path, models: Option<&Path>) -> Self {
        DataDir {
            root: root.to_path_buf(),
            models: models.map_or_else(|| root.join("models"), Path::to_path_buf),
        }
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn sequences_path(&self, split: Split) -> PathBuf {
        self.root.join(format!("{}.jsonl", split.name()))
    }

    pub fn help_path(&self, split: Split) -> PathBuf {
        self.root.join(format!("help_{}.jsonl", split.name()))
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn model_path(&self, kind: ModelKind) -> PathBuf {
        self.models.join(format!("{kind}.json"))
    }

    pub fn vocab(&self) -> CliResult<Vocabulary> {
        let path = self.vocab_path();
        let file = fs::File::open(&path).at(&path)?;
        Vocabulary::from_reader(BufReader::new(file)).at(&path)
    }

    pub fn sequences(&self, split: Split) -> CliResult<Vec<CommandSequence>> {
        read_jsonl_file(&self.sequences_path(split))
    }

    pub fn help_examples(&self, split: Split) -> CliResult<Vec<HelpExample>> {
        let path = self.help_path(split);
        if !path.exists() {
            return Err(CliError::validation(format!(
                "{} not found: ingest a log with --help-list to build help data",
                path.display()
            )));
        }
        read_jsonl_file(&path)
    }

    pub fn has_model(&self, kind: ModelKind) -> bool {
        self.model_path(kind).exists()
    }

    /// Loads a model file, checking its kind and vocabulary hash.
    pub fn load<T: DeserializeOwned>(&self, kind: ModelKind, vocab: &Vocabulary) -> CliResult<T> {
        let path = self.model_path(kind);
        if !path.exists() {
            return Err(CliError::validation(format!(
                "{} not found: run `taskrec {}` first",
                path.display(),
                prerequisite(kind)
            )));
        }
        load_model(&path, kind, Some(&vocab.fingerprint())).at(&path)
    }

    pub fn save<T: Serialize>(
        &self,
        kind: ModelKind,
        vocab: &Vocabulary,
        model: &T,
    ) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.models).at(&self.models)?;
        let path = self.model_path(kind);
        save_model(&path, kind, &vocab.fingerprint(), model).at(&path)?;
        Ok(path)
    }

    pub fn btm(&self, vocab: &Vocabulary) -> CliResult<BitermModel> {
        self.load(ModelKind::Btm, vocab)
    }

    pub fn recommender(&self, kind: ModelKind, vocab: &Vocabulary) -> CliResult<Recommender> {
        Ok(match kind {
            ModelKind::Firstmm => {
                Recommender::FirstOrder(self.load::<FirstOrderModel>(kind, vocab)?)
            }
            ModelKind::Pst => Recommender::Pst(self.load::<SuffixTree>(kind, vocab)?),
            ModelKind::Taskpst => Recommender::TaskPst(self.load::<TaskPstEnsemble>(kind, vocab)?),
            ModelKind::Vrnn | ModelKind::Taskrnn | ModelKind::Jtcrnn => {
                Recommender::Net(self.load::<RecommenderNet>(kind, vocab)?)
            }
            other => {
                return Err(CliError::validation(format!(
                    "{other} is not a recommender"
                )))
            }
        })
    }

    pub fn save_recommender(
        &self,
        kind: ModelKind,
        vocab: &Vocabulary,
        model: &Recommender,
    ) -> CliResult<PathBuf> {
        match model {
            Recommender::FirstOrder(m) => self.save(kind, vocab, m),
            Recommender::Pst(m) => self.save(kind, vocab, m),
            Recommender::TaskPst(m) => self.save(kind, vocab, m),
            Recommender::Net(m) => self.save(kind, vocab, m),
        }
    }

    pub fn help_model(&self, kind: ModelKind, vocab: &Vocabulary) -> CliResult<HelpModel> {
        Ok(match kind {
            ModelKind::HelpRf => HelpModel::Forest(self.load::<HelpForest>(kind, vocab)?),
            ModelKind::HelpLstm => HelpModel::Lstm(self.load::<HelpLstm>(kind, vocab)?),
            other => return Err(CliError::validation(format!("{other} is not a help model"))),
        })
    }

    pub fn save_help_model(
        &self,
        kind: ModelKind,
        vocab: &Vocabulary,
        model: &HelpModel,
    ) -> CliResult<PathBuf> {
        match model {
            HelpModel::Forest(m) => self.save(kind, vocab, m),
            HelpModel::Lstm(m) => self.save(kind, vocab, m),
        }
    }
}

/// The subcommand that produces a model of `kind`.
pub fn prerequisite(kind: ModelKind) -> String {
    match kind {
        ModelKind::Btm => "fit-btm".to_string(),
        other => format!("train {other}"),
    }
}

/// Reads a JSONL file, reporting the line of the first malformed record.
pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| CliError::Internal(e.to_string()))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).at(path)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn read_name_file(path: &Path) -> CliResult<Vec<String>> {
    let file = fs::File::open(path).at(path)?;
    taskrec_core::corpus::read_name_list(BufReader::new(file)).at(path)
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).at(path)
}

/// Standard output, with the progress stream silenced by `--quiet`.
pub struct Output {
    quiet: bool,
}

impl Output {
    pub fn new(quiet: bool) -> Self {
        Output { quiet }
    }

    /// One JSONL progress record.
    pub fn event<T: Serialize>(&self, value: &T) {
        if !self.quiet {
            self.result(value);
        }
    }

    /// One JSONL result record, printed even with `--quiet`.
    pub fn result<T: Serialize>(&self, value: &T) {
        let line = serde_json::to_string(value).expect("serializable record");
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
    }

    pub fn text(&self, text: &str) {
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(text.as_bytes());
        if !text.ends_with('\n') {
            let _ = out.write_all(b"\n");
        }
    }
}
