//! `taskrec synth`: a synthetic corpus with ground-truth labels.
//!
//! Writes `corpus.jsonl` (encoded sequences with gaps), `labels.jsonl`
//! (planted task and help flags per document), `vocab.json`, `log.jsonl`
//! (the same corpus as a raw event log, ready for `ingest`) and
//! `help_commands.txt`.

use std::path::{Path, PathBuf};

use serde::Serialize;

use taskrec_core::corpus::{generate_synthetic, HelpInjection, SyntheticSpec, HELP_COMMAND};

use crate::data::{create_dir, read_json_file, write_jsonl_file, Output};
use crate::error::{CliError, CliResult, WithPath};
use crate::knobs::Knobs;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// JSON corpus specification (defaults to a 3-task corpus with help sessions)
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Override the number of documents
    #[arg(long)]
    pub docs: Option<usize>,
    #[command(flatten)]
    pub knobs: Knobs,
}

#[derive(Serialize)]
struct Label<'a> {
    doc: usize,
    user: &'a str,
    task: usize,
    help: bool,
    #[serde(rename = "loop")]
    has_loop: bool,
}

#[derive(Serialize)]
struct Summary {
    event: &'static str,
    docs: usize,
    vocab_size: usize,
    help_sessions: usize,
    out: String,
}

pub fn default_spec() -> SyntheticSpec {
    let mut spec = SyntheticSpec::new(3, 8, 2000, 21);
    spec.shared_vocab = 6;
    spec.task_mixing = 0.05;
    spec.help_injection = Some(HelpInjection {
        positive_rate: 0.2,
        loop_rate: 0.5,
        pause_rate: 0.6,
        min_trigger: 9,
    });
    spec
}

pub fn run(args: Args, config: Option<&Path>, out: &Output) -> CliResult<()> {
    let knobs = args.knobs.resolve(config)?;
    let mut spec = match &args.spec {
        Some(p) => read_json_file(p)?,
        None => default_spec(),
    };
    if let Some(d) = args.docs {
        spec.docs = d;
    }
    let corpus = generate_synthetic(&spec, knobs.seed())?;
    create_dir(&args.out)?;

    write_jsonl_file(&args.out.join("corpus.jsonl"), &corpus.sequences)?;
    let labels: Vec<Label> = corpus
        .sequences
        .iter()
        .enumerate()
        .map(|(d, s)| Label {
            doc: d,
            user: &s.user,
            task: corpus.tasks[d],
            help: corpus.struggling[d],
            has_loop: corpus.has_loop[d],
        })
        .collect();
    write_jsonl_file(&args.out.join("labels.jsonl"), &labels)?;
    write_jsonl_file(&args.out.join("log.jsonl"), &corpus.log_lines())?;

    let vocab_path = args.out.join("vocab.json");
    let mut buf = Vec::new();
    corpus
        .vocab
        .to_writer(&mut buf)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    buf.push(b'\n');
    std::fs::write(&vocab_path, buf).at(&vocab_path)?;

    let help_path = args.out.join("help_commands.txt");
    let help_list = if spec.help_injection.is_some() {
        format!("{HELP_COMMAND}\n")
    } else {
        String::new()
    };
    std::fs::write(&help_path, help_list).at(&help_path)?;

    out.event(&Summary {
        event: "synth",
        docs: corpus.sequences.len(),
        vocab_size: corpus.vocab.len(),
        help_sessions: corpus.struggling.iter().filter(|&&s| s).count(),
        out: args.out.display().to_string(),
    });
    Ok(())
}
