//! Task-aware next-command recommendation and proactive help detection over
//! application usage logs.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] turns raw JSONL event logs into fixed-length command
//!   sequences, labels help-seeking sessions and synthesises corpora with
//!   planted task structure.
//! * [`topics`] fits a biterm topic model whose topics play the role of user
//!   tasks, and infers task distributions for whole sequences and prefixes.
//! * [`markov`] holds the counting recommenders: first-order Markov chains,
//!   pruned probabilistic suffix trees and the task-weighted tree ensemble.
//! * [`nn`] holds the recurrent recommenders (vanilla, task-conditioned and
//!   joint task/command) trained with backpropagation through time.
//! * [`help`] detects when a user is stuck, with a random-forest baseline
//!   and a streaming LSTM classifier.
//! * [`eval`] computes Top-k accuracy, precision/recall and AU-ROC and
//!   aggregates metrics over seeded runs.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod help;
pub mod markov;
pub mod nn;
pub mod persist;
pub mod rng;
pub mod topics;

pub use corpus::{CommandId, CommandSequence, HelpExample, HelpLabel, Vocabulary};
pub use error::{Error, Result};
pub use topics::{BitermModel, BtmConfig, TaskDistribution};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices sorted by descending value, ties broken by lower index.
pub fn ranked_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn ranking_is_stable_by_index() {
        assert_eq!(ranked_indices(&[0.1, 0.5, 0.1, 0.5]), vec![1, 3, 0, 2]);
    }
}
