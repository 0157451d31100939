//! `taskrec recommend`: batch next-command recommendation.
//!
//! Each input line holds a whitespace-separated command prefix; each output
//! line is a JSON record with the prefix's top task (when a task model is
//! available) and the top-k next commands.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde_json::json;

use taskrec_core::eval::NextCommandModel;
use taskrec_core::persist::ModelKind;
use taskrec_core::{BitermModel, CommandId, Vocabulary};

use crate::cmd::{parse_recommender, unknown_command, DataArgs};
use crate::data::{DataDir, Output};
use crate::error::{CliError, CliResult, WithPath};
use crate::knobs::Knobs;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    pub data: DataArgs,
    /// Recommender to use
    #[arg(long, value_parser = parse_recommender)]
    pub model: ModelKind,
    /// Prefix file, one prefix per line (defaults to standard input)
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: Knobs,
}

/// The task model used for side inputs and task display, when one exists.
pub fn optional_btm(
    dir: &DataDir,
    kind: ModelKind,
    vocab: &Vocabulary,
) -> CliResult<Option<BitermModel>> {
    if dir.has_model(ModelKind::Btm) {
        dir.btm(vocab).map(Some)
    } else if matches!(kind, ModelKind::Taskrnn | ModelKind::Jtcrnn) {
        Err(CliError::validation(format!(
            "{kind} needs a fitted task model: run fit-btm first"
        )))
    } else {
        Ok(None)
    }
}

pub fn recommendations_json(vocab: &Vocabulary, recs: &[(CommandId, f64)]) -> serde_json::Value {
    recs.iter()
        .map(|(c, p)| json!({ "command": vocab.name(*c), "p": p }))
        .collect()
}

pub fn run(args: Args, config: Option<&Path>, out: &Output) -> CliResult<()> {
    let knobs = args.knobs.resolve(config)?;
    let dir = args.data.dir();
    let vocab = dir.vocab()?;
    let btm = optional_btm(&dir, args.model, &vocab)?;
    let model = dir.recommender(args.model, &vocab)?;
    let predictor = model.predictor(btm.as_ref())?;
    let (reader, source): (Box<dyn BufRead>, String) = match &args.input {
        Some(p) => (
            Box::new(BufReader::new(File::open(p).at(p)?)),
            p.display().to_string(),
        ),
        None => (Box::new(std::io::stdin().lock()), "<stdin>".to_string()),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(format!("{source}: {e}")))?;
        let names: Vec<&str> = line.split_whitespace().collect();
        if names.is_empty() {
            continue;
        }
        let prefix = names
            .iter()
            .map(|n| vocab.id(n).ok_or_else(|| unknown_command(&vocab, n)))
            .collect::<CliResult<Vec<_>>>()
            .map_err(|e| e.context(format!("{source}:{}", i + 1)))?;
        let recs = predictor.recommend(&prefix, knobs.top_k())?;
        let task = match &btm {
            Some(b) => {
                let d = b.infer(&prefix)?;
                json!({ "id": d.argmax(), "p": d.probs()[d.argmax()] })
            }
            None => serde_json::Value::Null,
        };
        out.result(&json!({ "prefix": names, "task": task, "recommendations": recommendations_json(&vocab, &recs) }));
    }
    Ok(())
}
