//! Versioned model files.
//!
//! Every model is written as one JSON document
//! `{"format_version", "kind", "vocab_hash", "model"}`. Loading checks the
//! version, the kind and the vocabulary fingerprint before decoding the body.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Btm,
    Firstmm,
    Pst,
    Taskpst,
    Vrnn,
    Taskrnn,
    Jtcrnn,
    HelpRf,
    HelpLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Btm,
        ModelKind::Firstmm,
        ModelKind::Pst,
        ModelKind::Taskpst,
        ModelKind::Vrnn,
        ModelKind::Taskrnn,
        ModelKind::Jtcrnn,
        ModelKind::HelpRf,
        ModelKind::HelpLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Btm => "btm",
            ModelKind::Firstmm => "firstmm",
            ModelKind::Pst => "pst",
            ModelKind::Taskpst => "taskpst",
            ModelKind::Vrnn => "vrnn",
            ModelKind::Taskrnn => "taskrnn",
            ModelKind::Jtcrnn => "jtcrnn",
            ModelKind::HelpRf => "help-rf",
            ModelKind::HelpLstm => "help-lstm",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_recommender(self) -> bool {
        !matches!(
            self,
            ModelKind::Btm | ModelKind::HelpRf | ModelKind::HelpLstm
        )
    }

    pub fn is_help(self) -> bool {
        matches!(self, ModelKind::HelpRf | ModelKind::HelpLstm)
    }

    /// Whether training needs a fitted topic model.
    pub fn needs_btm(self) -> bool {
        matches!(
            self,
            ModelKind::Taskpst | ModelKind::Taskrnn | ModelKind::Jtcrnn
        )
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format_version: u32,
    kind: ModelKind,
    vocab_hash: &'a str,
    model: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    format_version: u32,
    kind: ModelKind,
    vocab_hash: String,
    model: T,
}

/// Header of a model file, read without decoding the body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub vocab_hash: String,
}

pub fn write_model<W: Write, T: Serialize>(
    w: W,
    kind: ModelKind,
    vocab_hash: &str,
    model: &T,
) -> Result<()> {
    let mut w = BufWriter::new(w);
    serde_json::to_writer(
        &mut w,
        &EnvelopeOut {
            format_version: FORMAT_VERSION,
            kind,
            vocab_hash,
            model,
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn save_model<T: Serialize>(
    path: &Path,
    kind: ModelKind,
    vocab_hash: &str,
    model: &T,
) -> Result<()> {
    write_model(File::create(path)?, kind, vocab_hash, model)
}

fn check(
    format_version: u32,
    kind: ModelKind,
    hash: &str,
    want_kind: Option<ModelKind>,
    want_hash: Option<&str>,
) -> Result<()> {
    if format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {format_version}"
        )));
    }
    if let Some(k) = want_kind.filter(|&k| k != kind) {
        return Err(Error::Format(format!("expected a {k} model, found {kind}")));
    }
    if let Some(h) = want_hash.filter(|&h| h != hash) {
        return Err(Error::VocabMismatch {
            expected: hash.to_string(),
            found: h.to_string(),
        });
    }
    Ok(())
}

/// Decodes a model, rejecting a different kind or vocabulary.
pub fn read_model<T: DeserializeOwned>(
    text: &str,
    kind: ModelKind,
    vocab_hash: Option<&str>,
) -> Result<T> {
    let head = read_header(text)?;
    check(
        FORMAT_VERSION,
        head.kind,
        &head.vocab_hash,
        Some(kind),
        vocab_hash,
    )?;
    let env: EnvelopeIn<T> = serde_json::from_str(text)?;
    check(
        env.format_version,
        env.kind,
        &env.vocab_hash,
        Some(kind),
        vocab_hash,
    )?;
    Ok(env.model)
}

pub fn read_header(text: &str) -> Result<ModelHeader> {
    let env: EnvelopeIn<serde::de::IgnoredAny> = serde_json::from_str(text)?;
    check(env.format_version, env.kind, &env.vocab_hash, None, None)?;
    Ok(ModelHeader {
        kind: env.kind,
        vocab_hash: env.vocab_hash,
    })
}

pub fn load_model<T: DeserializeOwned>(
    path: &Path,
    kind: ModelKind,
    vocab_hash: Option<&str>,
) -> Result<T> {
    read_model(&std::fs::read_to_string(path)?, kind, vocab_hash)
}

pub fn load_header(path: &Path) -> Result<ModelHeader> {
    let env: EnvelopeIn<serde::de::IgnoredAny> =
        serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check(env.format_version, env.kind, &env.vocab_hash, None, None)?;
    Ok(ModelHeader {
        kind: env.kind,
        vocab_hash: env.vocab_hash,
    })
}
