//! Command vocabularies, sequences and the log-to-corpus pipeline.

mod log;
mod preprocess;
mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use log::{
    filter_denylist, parse_log, read_name_list, LogLine, ParsedLog, RawEvent, RawSession,
};
pub use preprocess::{
    cap_repeats, encode_session, label_help, match_negative_lengths, normalize_sequence,
    preprocess, preprocess_sequences, sample_negatives, split_by_user, split_users, UserKeyed,
    DEFAULT_HELP_CONTEXT, DEFAULT_MAX_REPEAT, DEFAULT_TARGET_LEN,
};
pub use synth::{
    contains_loop, generate_synthetic, HelpInjection, SyntheticCorpus, SyntheticSpec, HELP_COMMAND,
    LONG_PAUSE_SECS,
};

/// Index of a command in a [`Vocabulary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommandId(pub u32);

impl CommandId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for CommandId {
    fn from(i: usize) -> Self {
        CommandId(i as u32)
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Name of the reserved id appended for commands unseen at corpus-build time.
pub const UNKNOWN_COMMAND: &str = "<unk>";

/// Ordered set of command names plus the subset flagged as help actions.
///
/// Names are kept in lexicographic order so that ids are a pure function of
/// the name set. The only exception is [`UNKNOWN_COMMAND`], which
/// [`Vocabulary::with_unknown`] appends at the end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    help_ids: BTreeSet<CommandId>,
    index: HashMap<String, CommandId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    names: Vec<String>,
    help_ids: Vec<CommandId>,
}

impl Vocabulary {
    /// Builds a vocabulary from any collection of names (duplicates allowed).
    /// Help names absent from `names` are ignored.
    pub fn new<I, S>(names: I, help_names: &[String]) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let names: Vec<String> = sorted.into_iter().collect();
        let index: HashMap<String, CommandId> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), CommandId::from(i)))
            .collect();
        let help_ids = help_names
            .iter()
            .filter_map(|n| index.get(n).copied())
            .collect();
        Vocabulary {
            names,
            help_ids,
            index,
        }
    }

    pub fn from_sessions(sessions: &[RawSession], help_names: &[String]) -> Self {
        Self::new(
            sessions
                .iter()
                .flat_map(|s| s.events.iter().map(|e| e.command.clone())),
            help_names,
        )
    }

    /// Appends the reserved `<unk>` entry (no-op if already present).
    pub fn with_unknown(mut self) -> Self {
        if !self.index.contains_key(UNKNOWN_COMMAND) {
            let id = CommandId::from(self.names.len());
            self.names.push(UNKNOWN_COMMAND.to_string());
            self.index.insert(UNKNOWN_COMMAND.to_string(), id);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: CommandId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<CommandId> {
        self.index.get(name).copied()
    }

    pub fn help_ids(&self) -> &BTreeSet<CommandId> {
        &self.help_ids
    }

    pub fn is_help(&self, id: CommandId) -> bool {
        self.help_ids.contains(&id)
    }

    /// Maps a name to its id, falling back to `<unk>` when the vocabulary
    /// carries one.
    pub fn encode(&self, name: &str) -> Result<CommandId> {
        self.id(name)
            .or_else(|| self.id(UNKNOWN_COMMAND))
            .ok_or_else(|| Error::UnknownCommand(name.to_string()))
    }

    pub fn check(&self, id: CommandId) -> Result<()> {
        if id.index() < self.len() {
            Ok(())
        } else {
            Err(Error::CommandOutOfRange {
                id: id.index(),
                size: self.len(),
            })
        }
    }

    /// Hex digest of names and help flags; model files record it so they
    /// can refuse to load against a different vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        h.update([0xffu8]);
        for id in &self.help_ids {
            h.update(id.0.to_le_bytes());
        }
        let digest = h.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Vocabulary names closest to `name` by edit distance, best first.
    pub fn suggest(&self, name: &str, n: usize) -> Vec<&str> {
        let mut scored: Vec<(usize, &str)> = self
            .names
            .iter()
            .map(|c| (edit_distance(name, c), c.as_str()))
            .collect();
        scored.sort();
        scored.into_iter().take(n).map(|(_, c)| c).collect()
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        let file = VocabularyFile {
            names: self.names.clone(),
            help_ids: self.help_ids.iter().copied().collect(),
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_reader(r)?;
        let index: HashMap<String, CommandId> = file
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), CommandId::from(i)))
            .collect();
        if index.len() != file.names.len() {
            return Err(Error::Format("vocabulary names are not unique".into()));
        }
        let vocab = Vocabulary {
            names: file.names,
            help_ids: file.help_ids.into_iter().collect(),
            index,
        };
        for &id in &vocab.help_ids {
            vocab.check(id)?;
        }
        Ok(vocab)
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// One user session as command ids, with optional inter-command gaps in
/// seconds (`gaps[0]` is always 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandSequence {
    pub user: String,
    pub commands: Vec<CommandId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaps: Option<Vec<f64>>,
}

impl CommandSequence {
    pub fn new(user: impl Into<String>, commands: Vec<CommandId>) -> Self {
        CommandSequence {
            user: user.into(),
            commands,
            gaps: None,
        }
    }

    pub fn with_gaps(user: impl Into<String>, commands: Vec<CommandId>, gaps: Vec<f64>) -> Self {
        debug_assert_eq!(commands.len(), gaps.len());
        CommandSequence {
            user: user.into(),
            commands,
            gaps: Some(gaps),
        }
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Gap before command `j`, 0 when gaps are absent.
    pub fn gap(&self, j: usize) -> f64 {
        self.gaps.as_ref().map_or(0.0, |g| g[j])
    }

    /// The first `len` commands (and gaps).
    pub fn truncated(&self, len: usize) -> CommandSequence {
        let len = len.min(self.len());
        CommandSequence {
            user: self.user.clone(),
            commands: self.commands[..len].to_vec(),
            gaps: self.gaps.as_ref().map(|g| g[..len].to_vec()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HelpLabel {
    Help,
    NoHelp,
}

impl HelpLabel {
    pub fn is_help(self) -> bool {
        self == HelpLabel::Help
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpExample {
    #[serde(flatten)]
    pub sequence: CommandSequence,
    pub label: HelpLabel,
}

/// Reads a JSONL file of `T` records, one per non-blank line.
pub fn read_jsonl<T, R>(r: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vocabulary_is_sorted_and_unique() {
        let v = Vocabulary::new(
            names(&["zoom", "apply", "zoom", "help"]),
            &names(&["help", "absent"]),
        );
        assert_eq!(v.names(), &names(&["apply", "help", "zoom"])[..]);
        assert_eq!(
            v.help_ids().iter().copied().collect::<Vec<_>>(),
            vec![CommandId(1)]
        );
    }

    #[test]
    fn unknown_commands_map_to_unk_only_when_reserved() {
        let v = Vocabulary::new(names(&["a", "b"]), &[]);
        assert!(matches!(v.encode("c"), Err(Error::UnknownCommand(_))));
        let v = v.with_unknown();
        assert_eq!(v.encode("c").unwrap(), CommandId(2));
        assert_eq!(v.encode("a").unwrap(), CommandId(0));
    }

    #[test]
    fn vocabulary_file_round_trip_keeps_fingerprint() {
        let v = Vocabulary::new(names(&["x", "y", "help"]), &names(&["help"]));
        let mut buf = Vec::new();
        v.to_writer(&mut buf).unwrap();
        let back = Vocabulary::from_reader(&buf[..]).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
        let other = Vocabulary::new(names(&["x", "y", "help"]), &[]);
        assert_ne!(other.fingerprint(), v.fingerprint());
    }

    #[test]
    fn suggestions_rank_by_edit_distance() {
        let v = Vocabulary::new(names(&["filter", "fitler_x", "sort", "segment"]), &[]);
        assert_eq!(v.suggest("filtr", 1), vec!["filter"]);
    }

    #[test]
    fn help_example_serializes_flat() {
        let ex = HelpExample {
            sequence: CommandSequence::with_gaps("u", vec![CommandId(1)], vec![0.0]),
            label: HelpLabel::NoHelp,
        };
        let s = serde_json::to_string(&ex).unwrap();
        assert_eq!(
            s,
            r#"{"user":"u","commands":[1],"gaps":[0.0],"label":"no_help"}"#
        );
    }
}
