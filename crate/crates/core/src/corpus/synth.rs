//! Synthetic corpora with planted task structure.
//!
//! Each task owns a slice of the vocabulary (plus any shared commands) and a
//! Markov chain over it. A chain prefers one successor per state, following a
//! random cyclic order; `transition_sharpness` is that successor's weight
//! relative to weight 1 for every other state.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{CommandId, CommandSequence, LogLine, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const HELP_COMMAND: &str = "help_open";
/// Gaps at or above this many seconds count as long pauses.
pub const LONG_PAUSE_SECS: f64 = 60.0;
const MEAN_GAP_SECS: f64 = 5.0;
const MAX_NORMAL_GAP_SECS: f64 = 45.0;
const LOOP_REPEATS: usize = 3;

/// How struggling sessions are planted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpInjection {
    /// Fraction of documents that end up asking for help.
    pub positive_rate: f64,
    /// Probability that a struggling document carries a command loop.
    pub loop_rate: f64,
    /// Probability that a struggling document carries a long pause.
    pub pause_rate: f64,
    /// Earliest index of the help command.
    #[serde(default = "default_min_trigger")]
    pub min_trigger: usize,
}

fn default_min_trigger() -> usize {
    9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_tasks: usize,
    pub vocab_per_task: usize,
    /// Commands visited by every task's chain, with task-specific successors.
    #[serde(default)]
    pub shared_vocab: usize,
    pub docs: usize,
    pub doc_length: usize,
    #[serde(default = "default_users")]
    pub users: usize,
    pub task_mixing: f64,
    pub transition_sharpness: f64,
    #[serde(default)]
    pub help_injection: Option<HelpInjection>,
}

fn default_users() -> usize {
    50
}

impl SyntheticSpec {
    pub fn new(num_tasks: usize, vocab_per_task: usize, docs: usize, doc_length: usize) -> Self {
        SyntheticSpec {
            num_tasks,
            vocab_per_task,
            shared_vocab: 0,
            docs,
            doc_length,
            users: default_users(),
            task_mixing: 0.0,
            transition_sharpness: 10.0,
            help_injection: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.num_tasks < 1 {
            return bad("num_tasks must be at least 1");
        }
        if self.vocab_per_task < 1 {
            return bad("vocab_per_task must be at least 1");
        }
        if self.docs < 1 || self.doc_length < 1 || self.users < 1 {
            return bad("docs, doc_length and users must be positive");
        }
        if !prob(self.task_mixing) {
            return bad("task_mixing must lie in [0, 1]");
        }
        if self.task_mixing > 0.0 && self.num_tasks < 2 {
            return bad("task_mixing needs at least two tasks");
        }
        if self.transition_sharpness.is_nan() || self.transition_sharpness < 0.0 {
            return bad("transition_sharpness must be non-negative");
        }
        if let Some(h) = &self.help_injection {
            if !(prob(h.positive_rate) && prob(h.loop_rate) && prob(h.pause_rate)) {
                return bad("help injection rates must lie in [0, 1]");
            }
            if h.min_trigger < 2 * LOOP_REPEATS || h.min_trigger >= self.doc_length {
                return bad("min_trigger must fit a planted loop and precede the document end");
            }
            if self.vocab_per_task + self.shared_vocab < 2 {
                return bad("a planted loop needs at least two commands per task");
            }
        }
        Ok(())
    }
}

/// Generated documents with their ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub sequences: Vec<CommandSequence>,
    /// Planted task of every document.
    pub tasks: Vec<usize>,
    /// Whether a help command was planted in the document.
    pub struggling: Vec<bool>,
    /// Whether the document carries a planted loop.
    pub has_loop: Vec<bool>,
    pub vocab: Vocabulary,
    /// Commands owned by each task.
    pub task_slices: Vec<Vec<CommandId>>,
    pub shared: Vec<CommandId>,
}

impl SyntheticCorpus {
    /// The corpus as raw log lines, one session per document.
    pub fn log_lines(&self) -> Vec<LogLine> {
        let mut lines = Vec::new();
        for (d, seq) in self.sequences.iter().enumerate() {
            let mut ts = 1.5e9 + d as f64 * 1.0e4;
            for (j, c) in seq.commands.iter().enumerate() {
                ts += seq.gap(j);
                lines.push(LogLine {
                    user: seq.user.clone(),
                    session: format!("s{d:06}"),
                    command: self.vocab.name(*c).unwrap_or_default().to_string(),
                    ts,
                });
            }
        }
        lines
    }

    /// Fraction of commands in document `d` that come from other tasks' slices.
    pub fn foreign_fraction(&self, d: usize) -> f64 {
        let own = &self.task_slices[self.tasks[d]];
        let seq = &self.sequences[d];
        let foreign = seq
            .commands
            .iter()
            .filter(|c| !own.contains(c) && !self.shared.contains(c) && !self.vocab.is_help(**c))
            .count();
        foreign as f64 / seq.len() as f64
    }
}

struct Chain {
    /// States in cyclic order; `successor[i]` is the preferred next of `states[i]`.
    states: Vec<CommandId>,
    successor: Vec<usize>,
    p_successor: f64,
}

impl Chain {
    fn new(states: Vec<CommandId>, sharpness: f64, r: &mut Rng) -> Self {
        let n = states.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(r);
        let mut successor = vec![0; n];
        for i in 0..n {
            successor[order[i]] = order[(i + 1) % n];
        }
        let p_successor = if n == 1 || sharpness.is_infinite() {
            1.0
        } else {
            sharpness / (sharpness + (n - 1) as f64)
        };
        Chain {
            states,
            successor,
            p_successor,
        }
    }

    fn next(&self, state: usize, r: &mut Rng) -> usize {
        let n = self.states.len();
        if n == 1 || r.gen::<f64>() < self.p_successor {
            return self.successor[state];
        }
        // Uniform over the other n - 1 states.
        let mut pick = r.gen_range(0..n - 1);
        if pick >= self.successor[state] {
            pick += 1;
        }
        pick
    }
}

fn task_name(z: usize, i: usize) -> String {
    format!("task{z:02}_cmd{i:02}")
}

fn shared_name(i: usize) -> String {
    format!("shared_cmd{i:02}")
}

/// Generates a corpus per `spec`; identical `(spec, seed)` give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut names: Vec<String> = (0..spec.num_tasks)
        .flat_map(|z| (0..spec.vocab_per_task).map(move |i| task_name(z, i)))
        .collect();
    names.extend((0..spec.shared_vocab).map(shared_name));
    let help_names = vec![HELP_COMMAND.to_string()];
    if spec.help_injection.is_some() {
        names.push(HELP_COMMAND.to_string());
    }
    let vocab = Vocabulary::new(names, &help_names);
    let id = |n: &str| vocab.id(n).expect("generated name");
    let task_slices: Vec<Vec<CommandId>> = (0..spec.num_tasks)
        .map(|z| {
            (0..spec.vocab_per_task)
                .map(|i| id(&task_name(z, i)))
                .collect()
        })
        .collect();
    let shared: Vec<CommandId> = (0..spec.shared_vocab)
        .map(|i| id(&shared_name(i)))
        .collect();
    let help_id = spec.help_injection.as_ref().map(|_| id(HELP_COMMAND));

    let mut chain_rng = rng::substream(seed, 0);
    let chains: Vec<Chain> = task_slices
        .iter()
        .map(|slice| {
            let states = slice.iter().chain(&shared).copied().collect();
            Chain::new(states, spec.transition_sharpness, &mut chain_rng)
        })
        .collect();
    let gap_dist = Exp::new(1.0 / MEAN_GAP_SECS).expect("positive rate");

    let mut out = SyntheticCorpus {
        sequences: Vec::with_capacity(spec.docs),
        tasks: Vec::with_capacity(spec.docs),
        struggling: Vec::with_capacity(spec.docs),
        has_loop: Vec::with_capacity(spec.docs),
        vocab: vocab.clone(),
        task_slices: task_slices.clone(),
        shared,
    };

    for d in 0..spec.docs {
        let mut r = rng::substream(seed, d as u64 + 1);
        let z = r.gen_range(0..spec.num_tasks);
        let chain = &chains[z];
        let mut state = r.gen_range(0..chain.states.len());
        let mut commands = Vec::with_capacity(spec.doc_length);
        let mut gaps = Vec::with_capacity(spec.doc_length);
        for pos in 0..spec.doc_length {
            if spec.task_mixing > 0.0 && r.gen::<f64>() < spec.task_mixing {
                let mut other = r.gen_range(0..spec.num_tasks - 1);
                if other >= z {
                    other += 1;
                }
                let slice = &task_slices[other];
                commands.push(slice[r.gen_range(0..slice.len())]);
            } else {
                commands.push(chain.states[state]);
                state = chain.next(state, &mut r);
            }
            gaps.push(if pos == 0 {
                0.0
            } else {
                gap_dist.sample(&mut r).clamp(0.2, MAX_NORMAL_GAP_SECS)
            });
        }

        let mut struggling = false;
        let mut planted_loop = false;
        if let (Some(h), Some(help)) = (&spec.help_injection, help_id) {
            if r.gen::<f64>() < h.positive_rate {
                struggling = true;
                let trigger = r.gen_range(h.min_trigger..spec.doc_length);
                let mut with_loop = r.gen::<f64>() < h.loop_rate;
                let with_pause = r.gen::<f64>() < h.pause_rate;
                if !with_loop && !with_pause {
                    with_loop = true;
                }
                if with_loop {
                    let picks: Vec<&CommandId> = chain.states.choose_multiple(&mut r, 2).collect();
                    let start = trigger - 2 * LOOP_REPEATS;
                    for j in 0..2 * LOOP_REPEATS {
                        commands[start + j] = *picks[j % 2];
                    }
                    planted_loop = true;
                }
                if with_pause {
                    let at = r.gen_range(trigger - 3..trigger);
                    gaps[at] = r.gen_range(LONG_PAUSE_SECS..300.0);
                }
                commands[trigger] = help;
            }
        }

        out.sequences.push(CommandSequence::with_gaps(
            format!("user{:04}", d % spec.users),
            commands,
            gaps,
        ));
        out.tasks.push(z);
        out.struggling.push(struggling);
        out.has_loop.push(planted_loop);
    }
    Ok(out)
}

/// True if `commands` contains a two-command cycle repeated `repeats` times.
pub fn contains_loop(commands: &[CommandId], repeats: usize) -> bool {
    let span = 2 * repeats;
    commands
        .windows(span)
        .any(|w| w[0] != w[1] && w.iter().enumerate().all(|(j, c)| *c == w[j % 2]))
}
