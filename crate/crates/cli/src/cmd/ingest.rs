//! `taskrec ingest`: raw event log to a prepared data directory.
//!
//! Parses the log, drops denylisted commands, builds the vocabulary,
//! normalizes sessions into fixed-length recommendation sequences, labels
//! help sessions and samples negatives, and splits everything by user with
//! one shared user partition.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;

use taskrec_core::corpus::{
    cap_repeats, encode_session, filter_denylist, parse_log, preprocess, split_users,
    CommandSequence, HelpExample, UserKeyed,
};
use taskrec_core::experiment::build_help_examples;
use taskrec_core::rng::derive_seed;
use taskrec_core::Vocabulary;

use crate::data::{
    create_dir, read_name_file, write_json_file, write_jsonl_file, DataDir, Output, Split,
};
use crate::error::{CliError, CliResult, WithPath};
use crate::knobs::Knobs;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// JSONL event log with `user`, `session`, `command` and `ts` fields
    #[arg(long, value_name = "FILE")]
    pub log: PathBuf,
    /// Commands to drop, one per line
    #[arg(long, value_name = "FILE")]
    pub denylist: Option<PathBuf>,
    /// Commands that open help, one per line
    #[arg(long, value_name = "FILE")]
    pub help_list: Option<PathBuf>,
    /// Output data directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub knobs: Knobs,
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct Stats {
    pub sessions: usize,
    pub skipped_lines: usize,
    pub denylisted_sessions: usize,
    pub vocab_size: usize,
    pub sequences: usize,
    pub help_positives: usize,
    pub help_negatives: usize,
    pub users: BTreeMap<String, usize>,
    pub sequences_by_split: BTreeMap<String, usize>,
    pub help_by_split: BTreeMap<String, usize>,
}

fn by_split<T: UserKeyed + Clone>(
    items: &[T],
    splits: &[(Split, BTreeSet<String>)],
) -> Vec<(Split, Vec<T>)> {
    splits
        .iter()
        .map(|(s, users)| {
            (
                *s,
                items
                    .iter()
                    .filter(|i| users.contains(i.user()))
                    .cloned()
                    .collect(),
            )
        })
        .collect()
}

pub fn run(args: Args, config: Option<&Path>, out: &Output) -> CliResult<()> {
    let knobs = args.knobs.resolve(config)?;
    let seed = knobs.seed();

    let file = File::open(&args.log).at(&args.log)?;
    let parsed = parse_log(BufReader::new(file)).at(&args.log)?;
    if parsed.skipped > 0 {
        eprintln!(
            "warning: {}: skipped {} malformed line(s)",
            args.log.display(),
            parsed.skipped
        );
    }
    let n_sessions = parsed.sessions.len();
    let denylist: HashSet<String> = match &args.denylist {
        Some(p) => read_name_file(p)?.into_iter().collect(),
        None => HashSet::new(),
    };
    let sessions = filter_denylist(parsed.sessions, &denylist);
    let help_names = match &args.help_list {
        Some(p) => read_name_file(p)?,
        None => Vec::new(),
    };
    let vocab = Vocabulary::from_sessions(&sessions, &help_names);
    if !help_names.is_empty() && vocab.help_ids().is_empty() {
        return Err(CliError::validation(
            "none of the help commands occur in the log",
        ));
    }

    let sequences = preprocess(&sessions, &vocab, knobs.max_repeat(), knobs.length())?;
    if sequences.is_empty() {
        return Err(CliError::validation(format!(
            "no session has {} commands after preprocessing",
            knobs.length()
        )));
    }
    let (positives, negatives) = if vocab.help_ids().is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let full: Vec<CommandSequence> = sessions
            .iter()
            .map(|s| encode_session(s, &vocab).map(|seq| cap_repeats(&seq, knobs.max_repeat())))
            .collect::<taskrec_core::Result<_>>()?;
        build_help_examples(
            &full,
            &vocab,
            knobs.min_context(),
            knobs.negative_ratio(),
            knobs.length_match(),
            seed,
        )
        .map_err(|e| CliError::from(e).context("building help examples"))?
    };

    let users: BTreeSet<String> = sessions.iter().map(|s| s.user.clone()).collect();
    let (train_users, test_users) = split_users(&users, knobs.test_fraction(), seed)?;
    let (train_users, val_users) =
        split_users(&train_users, knobs.val_fraction(), derive_seed(seed, 1))?;
    let splits = [
        (Split::Train, train_users),
        (Split::Val, val_users),
        (Split::Test, test_users),
    ];

    create_dir(&args.out)?;
    let dir = DataDir::new(&args.out, None);
    let vocab_path = dir.vocab_path();
    let mut buf = Vec::new();
    vocab
        .to_writer(&mut buf)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    buf.push(b'\n');
    std::fs::write(&vocab_path, buf).at(&vocab_path)?;

    let mut sequences_by_split = BTreeMap::new();
    for (split, items) in by_split(&sequences, &splits) {
        write_jsonl_file(&dir.sequences_path(split), &items)?;
        sequences_by_split.insert(split.name().to_string(), items.len());
    }
    let mut help_by_split = BTreeMap::new();
    if !positives.is_empty() {
        let examples: Vec<HelpExample> = positives.iter().chain(&negatives).cloned().collect();
        for (split, items) in by_split(&examples, &splits) {
            write_jsonl_file(&dir.help_path(split), &items)?;
            help_by_split.insert(split.name().to_string(), items.len());
        }
    }

    let stats = Stats {
        sessions: n_sessions,
        skipped_lines: parsed.skipped,
        denylisted_sessions: n_sessions - sessions.len(),
        vocab_size: vocab.len(),
        sequences: sequences.len(),
        help_positives: positives.len(),
        help_negatives: negatives.len(),
        users: splits
            .iter()
            .map(|(s, u)| (s.name().to_string(), u.len()))
            .collect(),
        sequences_by_split,
        help_by_split,
    };
    write_json_file(&dir.stats_path(), &stats)?;
    out.event(&serde_json::json!({ "event": "ingest", "stats": stats }));
    Ok(())
}
