use std::collections::{BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use super::{CommandId, CommandSequence, HelpExample, HelpLabel, RawSession, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_MAX_REPEAT: usize = 2;
pub const DEFAULT_TARGET_LEN: usize = 21;
/// Minimum number of commands observed before help may be predicted.
pub const DEFAULT_HELP_CONTEXT: usize = 8;

/// Drops every command that would extend a run of identical commands past
/// `max_repeat`. Gaps of dropped commands are dropped with them.
pub fn cap_repeats(seq: &CommandSequence, max_repeat: usize) -> CommandSequence {
    let mut commands = Vec::with_capacity(seq.len());
    let mut gaps = seq.gaps.as_ref().map(|g| Vec::with_capacity(g.len()));
    let mut run = 0;
    for (j, &c) in seq.commands.iter().enumerate() {
        run = if commands.last() == Some(&c) {
            run + 1
        } else {
            1
        };
        if run > max_repeat {
            continue;
        }
        commands.push(c);
        if let (Some(out), Some(src)) = (gaps.as_mut(), seq.gaps.as_ref()) {
            out.push(src[j]);
        }
    }
    CommandSequence {
        user: seq.user.clone(),
        commands,
        gaps,
    }
}

/// Caps repeats, then drops sequences shorter than `target_len` and keeps
/// the first `target_len` commands of longer ones.
pub fn normalize_sequence(
    seq: &CommandSequence,
    max_repeat: usize,
    target_len: usize,
) -> Option<CommandSequence> {
    let capped = cap_repeats(seq, max_repeat);
    (capped.len() >= target_len).then(|| capped.truncated(target_len))
}

fn check_params(max_repeat: usize, target_len: usize) -> Result<()> {
    if max_repeat < 1 {
        return Err(Error::InvalidConfig("max_repeat must be at least 1".into()));
    }
    if target_len < 2 {
        return Err(Error::InvalidConfig("target_len must be at least 2".into()));
    }
    Ok(())
}

/// Encodes one raw session, with gaps taken from consecutive timestamps.
pub fn encode_session(session: &RawSession, vocab: &Vocabulary) -> Result<CommandSequence> {
    let commands = session
        .events
        .iter()
        .map(|e| vocab.encode(&e.command))
        .collect::<Result<Vec<_>>>()?;
    let gaps = session
        .events
        .iter()
        .enumerate()
        .map(|(j, e)| {
            if j == 0 {
                0.0
            } else {
                (e.ts - session.events[j - 1].ts).max(0.0)
            }
        })
        .collect();
    Ok(CommandSequence::with_gaps(
        session.user.clone(),
        commands,
        gaps,
    ))
}

/// Maps raw sessions onto fixed-length command sequences.
pub fn preprocess(
    sessions: &[RawSession],
    vocab: &Vocabulary,
    max_repeat: usize,
    target_len: usize,
) -> Result<Vec<CommandSequence>> {
    check_params(max_repeat, target_len)?;
    let mut out = Vec::new();
    for s in sessions {
        out.extend(normalize_sequence(
            &encode_session(s, vocab)?,
            max_repeat,
            target_len,
        ));
    }
    Ok(out)
}

/// [`preprocess`] for sequences that are already encoded.
pub fn preprocess_sequences(
    seqs: &[CommandSequence],
    max_repeat: usize,
    target_len: usize,
) -> Result<Vec<CommandSequence>> {
    check_params(max_repeat, target_len)?;
    Ok(seqs
        .iter()
        .filter_map(|s| normalize_sequence(s, max_repeat, target_len))
        .collect())
}

/// Splits sequences into help positives and help-free sequences.
///
/// A sequence whose first help command sits at index `p > k` becomes a
/// positive holding the `p` commands before it, so every positive has at
/// least `k + 1` commands of context. Sequences that ask for help earlier
/// are discarded from both outputs.
pub fn label_help(
    sequences: &[CommandSequence],
    help_ids: &BTreeSet<CommandId>,
    k: usize,
) -> (Vec<HelpExample>, Vec<CommandSequence>) {
    let mut positives = Vec::new();
    let mut rest = Vec::new();
    for seq in sequences {
        match seq.commands.iter().position(|c| help_ids.contains(c)) {
            None => rest.push(seq.clone()),
            Some(p) if p > k => positives.push(HelpExample {
                sequence: seq.truncated(p),
                label: HelpLabel::Help,
            }),
            Some(_) => {}
        }
    }
    (positives, rest)
}

/// Draws `n` help-free sequences uniformly without replacement.
pub fn sample_negatives(rest: &[CommandSequence], n: usize, seed: u64) -> Result<Vec<HelpExample>> {
    if n > rest.len() {
        return Err(Error::InsufficientData {
            needed: n,
            available: rest.len(),
        });
    }
    let mut r = rng::seeded(seed);
    Ok(index::sample(&mut r, rest.len(), n)
        .into_iter()
        .map(|i| HelpExample {
            sequence: rest[i].clone(),
            label: HelpLabel::NoHelp,
        })
        .collect())
}

/// Truncates each negative to a length drawn from the positives' length
/// distribution, so that sequence length alone does not reveal the label.
pub fn match_negative_lengths(negatives: &mut [HelpExample], positives: &[HelpExample], seed: u64) {
    if positives.is_empty() {
        return;
    }
    let lengths: Vec<usize> = positives.iter().map(|p| p.sequence.len()).collect();
    let mut r = rng::seeded(seed);
    for neg in negatives.iter_mut() {
        let len = lengths[r.gen_range(0..lengths.len())];
        neg.sequence = neg.sequence.truncated(len);
    }
}

pub trait UserKeyed {
    fn user(&self) -> &str;
}

impl UserKeyed for CommandSequence {
    fn user(&self) -> &str {
        &self.user
    }
}

impl UserKeyed for HelpExample {
    fn user(&self) -> &str {
        &self.sequence.user
    }
}

/// Partitions a user set into `(train, test)` with
/// `round(test_fraction * |users|)` test users.
pub fn split_users(
    users: &BTreeSet<String>,
    test_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} outside [0, 1]"
        )));
    }
    if users.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 users, found {}",
            users.len()
        )));
    }
    let mut order: Vec<&String> = users.iter().collect();
    order.shuffle(&mut rng::seeded(seed));
    let n_test = (test_fraction * users.len() as f64).round() as usize;
    let test = order[..n_test].iter().map(|u| (*u).clone()).collect();
    let train = order[n_test..].iter().map(|u| (*u).clone()).collect();
    Ok((train, test))
}

/// Splits items so that every user's items land on one side.
pub fn split_by_user<T: UserKeyed + Clone>(
    items: &[T],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let users: BTreeSet<String> = items.iter().map(|i| i.user().to_string()).collect();
    let (_, test_users) = split_users(&users, test_fraction, seed)?;
    let test_users: HashSet<&str> = test_users.iter().map(String::as_str).collect();
    let (test, train): (Vec<T>, Vec<T>) = items
        .iter()
        .cloned()
        .partition(|i| test_users.contains(i.user()));
    Ok((train, test))
}
