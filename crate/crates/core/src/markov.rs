//! Counting recommenders: first-order Markov chain, probabilistic suffix tree
//! and the task-weighted ensemble of suffix trees.
//!
//! Fitted structures hold raw counts; Laplace smoothing (`+1` per command) is
//! applied only when a distribution is requested.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{CommandId, CommandSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::NextCommandModel;
use crate::topics::BitermModel;

pub const DEFAULT_MAX_DEPTH: usize = 10;
pub const DEFAULT_MIN_COUNT: u64 = 7;

fn smoothed(counts: impl Iterator<Item = f64>, total: f64, vocab_size: usize) -> Vec<f64> {
    let denom = total + vocab_size as f64;
    counts.map(|c| (c + 1.0) / denom).collect()
}

fn check_ids(seqs: &[CommandSequence], vocab_size: usize) -> Result<()> {
    for s in seqs {
        for c in &s.commands {
            if c.index() >= vocab_size {
                return Err(Error::CommandOutOfRange {
                    id: c.index(),
                    size: vocab_size,
                });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderModel {
    pub vocab_size: usize,
    /// `V x V`, row-major: `counts[a * V + b]` adjacent pairs `(a, b)`.
    pub counts: Vec<u64>,
    pub row_totals: Vec<u64>,
}

impl FirstOrderModel {
    pub fn count(&self, a: CommandId, b: CommandId) -> u64 {
        self.counts[a.index() * self.vocab_size + b.index()]
    }

    /// Laplace-smoothed `P(next | last)`.
    pub fn predict(&self, last: CommandId) -> Vec<f64> {
        let v = self.vocab_size;
        let row = &self.counts[last.index() * v..(last.index() + 1) * v];
        smoothed(
            row.iter().map(|&c| c as f64),
            self.row_totals[last.index()] as f64,
            v,
        )
    }
}

pub fn fit_first_order(train: &[CommandSequence], vocab_size: usize) -> Result<FirstOrderModel> {
    check_ids(train, vocab_size)?;
    let mut counts = vec![0u64; vocab_size * vocab_size];
    let mut row_totals = vec![0u64; vocab_size];
    for s in train {
        for w in s.commands.windows(2) {
            counts[w[0].index() * vocab_size + w[1].index()] += 1;
            row_totals[w[0].index()] += 1;
        }
    }
    Ok(FirstOrderModel {
        vocab_size,
        counts,
        row_totals,
    })
}

pub fn predict_markov(model: &FirstOrderModel, last: CommandId) -> Vec<f64> {
    model.predict(last)
}

impl NextCommandModel for FirstOrderModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>> {
        match prefix.last() {
            Some(&c) => Ok(FirstOrderModel::predict(self, c)),
            None => Ok(vec![1.0 / self.vocab_size as f64; self.vocab_size]),
        }
    }
}

/// Next-command counts observed after one context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PstNode {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl PstNode {
    fn empty(v: usize) -> Self {
        PstNode {
            counts: vec![0; v],
            total: 0,
        }
    }

    fn add(&mut self, next: CommandId) {
        self.counts[next.index()] += 1;
        self.total += 1;
    }

    pub fn distribution(&self) -> Vec<f64> {
        let v = self.counts.len();
        smoothed(self.counts.iter().map(|&c| c as f64), self.total as f64, v)
    }
}

/// Variable-order context tree. Contexts are stored oldest-first, so the
/// parent of a context drops its first element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "SuffixTreeFile", into = "SuffixTreeFile")]
pub struct SuffixTree {
    pub vocab_size: usize,
    pub max_depth: usize,
    pub min_count: u64,
    pub root: PstNode,
    pub nodes: BTreeMap<Vec<CommandId>, PstNode>,
}

#[derive(Serialize, Deserialize)]
struct SuffixTreeFile {
    vocab_size: usize,
    max_depth: usize,
    min_count: u64,
    root: Vec<u64>,
    nodes: Vec<(Vec<CommandId>, Vec<u64>)>,
}

impl From<SuffixTree> for SuffixTreeFile {
    fn from(t: SuffixTree) -> Self {
        SuffixTreeFile {
            vocab_size: t.vocab_size,
            max_depth: t.max_depth,
            min_count: t.min_count,
            root: t.root.counts,
            nodes: t.nodes.into_iter().map(|(k, n)| (k, n.counts)).collect(),
        }
    }
}

impl From<SuffixTreeFile> for SuffixTree {
    fn from(f: SuffixTreeFile) -> Self {
        let node = |counts: Vec<u64>| PstNode {
            total: counts.iter().sum(),
            counts,
        };
        SuffixTree {
            vocab_size: f.vocab_size,
            max_depth: f.max_depth,
            min_count: f.min_count,
            root: node(f.root),
            nodes: f.nodes.into_iter().map(|(k, c)| (k, node(c))).collect(),
        }
    }
}

/// The pruning rule: a context is kept when it was followed by a command at
/// least `min_count` times.
#[inline]
fn keeps(occurrences: u64, min_count: u64) -> bool {
    occurrences >= min_count
}

/// Fits a suffix tree over every context of length `1..=max_depth` that
/// precedes a command. The root counts every command that has a predecessor.
pub fn fit_pst(
    train: &[CommandSequence],
    vocab_size: usize,
    max_depth: usize,
    min_count: u64,
) -> Result<SuffixTree> {
    check_ids(train, vocab_size)?;
    let mut occurrences: HashMap<&[CommandId], u64> = HashMap::new();
    for s in train {
        let c = &s.commands;
        for n in 1..c.len() {
            for d in 1..=max_depth.min(n) {
                *occurrences.entry(&c[n - d..n]).or_default() += 1;
            }
        }
    }
    let mut nodes: BTreeMap<Vec<CommandId>, PstNode> = occurrences
        .into_iter()
        .filter(|&(_, n)| keeps(n, min_count))
        .map(|(ctx, _)| (ctx.to_vec(), PstNode::empty(vocab_size)))
        .collect();
    let mut root = PstNode::empty(vocab_size);
    for s in train {
        let c = &s.commands;
        for n in 1..c.len() {
            root.add(c[n]);
            for d in 1..=max_depth.min(n) {
                if let Some(node) = nodes.get_mut(&c[n - d..n]) {
                    node.add(c[n]);
                }
            }
        }
    }
    Ok(SuffixTree {
        vocab_size,
        max_depth,
        min_count,
        root,
        nodes,
    })
}

impl SuffixTree {
    /// The node of the longest suffix of `prefix` present in the tree, or
    /// the root.
    pub fn longest_match<'a, 'p>(
        &'a self,
        prefix: &'p [CommandId],
    ) -> (&'p [CommandId], &'a PstNode) {
        let n = prefix.len();
        for d in (1..=self.max_depth.min(n)).rev() {
            let ctx = &prefix[n - d..];
            if let Some(node) = self.nodes.get(ctx) {
                return (ctx, node);
            }
        }
        (&prefix[n..], &self.root)
    }

    pub fn predict(&self, prefix: &[CommandId]) -> Vec<f64> {
        self.longest_match(prefix).1.distribution()
    }

    /// Commands that appear anywhere in the tree's counts.
    pub fn observed_commands(&self) -> Vec<CommandId> {
        let mut seen = vec![false; self.vocab_size];
        for (ctx, node) in std::iter::once((&Vec::new(), &self.root)).chain(self.nodes.iter()) {
            ctx.iter().for_each(|c| seen[c.index()] = true);
            node.counts
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .for_each(|(w, _)| seen[w] = true);
        }
        (0..self.vocab_size)
            .filter(|&w| seen[w])
            .map(CommandId::from)
            .collect()
    }

    /// Indented text rendering: each node lists its total and its three most
    /// frequent next commands; children (one older command) are nested below.
    pub fn dump(&self, vocab: &Vocabulary) -> String {
        let mut children: BTreeMap<&[CommandId], Vec<&Vec<CommandId>>> = BTreeMap::new();
        for ctx in self.nodes.keys() {
            children.entry(&ctx[1..]).or_default().push(ctx);
        }
        let mut out = String::new();
        let name = |c: &CommandId| vocab.name(*c).unwrap_or("?").to_string();
        let render = |node: &PstNode| {
            let top: Vec<String> =
                crate::ranked_indices(&node.counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
                    .into_iter()
                    .take(3)
                    .filter(|&w| node.counts[w] > 0)
                    .map(|w| format!("{}:{}", name(&CommandId::from(w)), node.counts[w]))
                    .collect();
            format!("total={} next=[{}]", node.total, top.join(", "))
        };
        let _ = writeln!(out, "<null> {}", render(&self.root));
        let mut stack: Vec<(&[CommandId], usize)> = children
            .get(&[][..])
            .map(|v| v.iter().rev().map(|c| (c.as_slice(), 1)).collect())
            .unwrap_or_default();
        while let Some((ctx, depth)) = stack.pop() {
            let label: Vec<String> = ctx.iter().map(name).collect();
            let _ = writeln!(
                out,
                "{}{} {}",
                "  ".repeat(depth),
                label.join(" "),
                render(&self.nodes[ctx])
            );
            if let Some(kids) = children.get(ctx) {
                stack.extend(kids.iter().rev().map(|c| (c.as_slice(), depth + 1)));
            }
        }
        out
    }
}

pub fn pst_predict(tree: &SuffixTree, prefix: &CommandSequence) -> Vec<f64> {
    tree.predict(&prefix.commands)
}

impl NextCommandModel for SuffixTree {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>> {
        Ok(SuffixTree::predict(self, prefix))
    }
}

/// One suffix tree per task, mixed by the prefix's task distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPstEnsemble {
    pub trees: Vec<SuffixTree>,
    pub btm: BitermModel,
}

/// Routes each training sequence to the tree of its most likely task (by
/// the full-sequence task distribution) and fits one tree per shard.
pub fn fit_task_pst(
    train: &[CommandSequence],
    btm: &BitermModel,
    max_depth: usize,
    min_count: u64,
) -> Result<TaskPstEnsemble> {
    let mut shards: Vec<Vec<CommandSequence>> = vec![Vec::new(); btm.k()];
    for s in train {
        let z = btm.infer(&s.commands)?.argmax();
        shards[z].push(s.clone());
    }
    let trees = shards
        .iter()
        .map(|shard| fit_pst(shard, btm.vocab_size, max_depth, min_count))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskPstEnsemble {
        trees,
        btm: btm.clone(),
    })
}

impl TaskPstEnsemble {
    /// `sum_z w[z] * tree_z(prefix)` for explicit task weights.
    pub fn mix(&self, weights: &[f64], prefix: &[CommandId]) -> Vec<f64> {
        let mut out = vec![0.0; self.btm.vocab_size];
        for (tree, &w) in self.trees.iter().zip(weights) {
            for (o, p) in out.iter_mut().zip(tree.predict(prefix)) {
                *o += w * p;
            }
        }
        out
    }

    pub fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>> {
        let w = self.btm.infer(prefix)?;
        Ok(self.mix(w.probs(), prefix))
    }
}

pub fn taskpst_predict(ens: &TaskPstEnsemble, prefix: &CommandSequence) -> Result<Vec<f64>> {
    ens.predict(&prefix.commands)
}

impl NextCommandModel for TaskPstEnsemble {
    fn vocab_size(&self) -> usize {
        self.btm.vocab_size
    }

    fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>> {
        TaskPstEnsemble::predict(self, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use crate::topics::{fit_btm, BtmConfig};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn seq(v: &[u32]) -> CommandSequence {
        CommandSequence::new("u", v.iter().map(|&i| CommandId(i)).collect())
    }

    fn ids(v: &[u32]) -> Vec<CommandId> {
        v.iter().map(|&i| CommandId(i)).collect()
    }

    fn random_corpus(n: usize, v: u32, len: usize, seed: u64) -> Vec<CommandSequence> {
        let mut r = crate::rng::seeded(seed);
        (0..n)
            .map(|_| seq(&(0..len).map(|_| r.gen_range(0..v)).collect::<Vec<_>>()))
            .collect()
    }

    fn is_distribution(p: &[f64]) -> bool {
        p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }

    #[test]
    fn first_order_counts() {
        let m = fit_first_order(&[seq(&[0, 1]), seq(&[0, 1])], 3).unwrap();
        assert_eq!(m.count(CommandId(0), CommandId(1)), 2);
        assert_eq!(m.counts.iter().sum::<u64>(), 2);
        let m = fit_first_order(&[seq(&[0, 1]), seq(&[0, 2])], 3).unwrap();
        let raw = |a: u32, b: u32| {
            m.count(CommandId(a), CommandId(b)) as f64 / m.row_totals[a as usize] as f64
        };
        assert_eq!(raw(0, 1), 0.5);
        assert_eq!(raw(0, 2), 0.5);
    }

    #[test]
    fn laplace_smoothing() {
        let m = fit_first_order(&[seq(&[0, 1])], 4).unwrap();
        assert_eq!(m.predict(CommandId(3)), vec![0.25; 4]);
        let chain = vec![seq(&[0, 1]); 100];
        let m = fit_first_order(&chain, 2).unwrap();
        assert_eq!(m.predict(CommandId(0))[1], 101.0 / 102.0);
        assert_eq!(crate::argmax(&m.predict(CommandId(0))), 1);
    }

    #[test]
    fn depth_one_tree_equals_first_order_counts() {
        let corpus = random_corpus(50, 6, 21, 1);
        let fo = fit_first_order(&corpus, 6).unwrap();
        let tree = fit_pst(&corpus, 6, 1, 1).unwrap();
        for a in 0..6u32 {
            let node = &tree.nodes[&ids(&[a])];
            assert_eq!(
                &node.counts[..],
                &fo.counts[a as usize * 6..(a as usize + 1) * 6]
            );
        }
    }

    #[test]
    fn contexts_below_threshold_are_pruned() {
        // [0, 1] is followed by a command exactly six times.
        let corpus: Vec<_> = (0..6).map(|_| seq(&[0, 1, 2])).collect();
        let tree = fit_pst(&corpus, 3, 3, 7).unwrap();
        assert!(!tree.nodes.contains_key(&ids(&[0, 1])));
        let mut more = corpus.clone();
        more.push(seq(&[0, 1, 2]));
        let tree = fit_pst(&more, 3, 3, 7).unwrap();
        assert!(tree.nodes.contains_key(&ids(&[0, 1])));
    }

    #[test]
    fn longest_match_wins() {
        let corpus = random_corpus(300, 3, 21, 2);
        let tree = fit_pst(&corpus, 3, 10, 1).unwrap();
        let prefix = corpus[0].commands[..12].to_vec();
        let (ctx, node) = tree.longest_match(&prefix);
        assert_eq!(ctx, &prefix[2..]);
        assert_eq!(tree.predict(&prefix), node.distribution());
        assert_eq!(tree.predict(&[]), tree.root.distribution());
    }

    #[test]
    fn unseen_last_command_backs_off_to_root() {
        let corpus = vec![seq(&[0, 1, 0, 1, 2]); 3];
        let tree = fit_pst(&corpus, 4, 3, 1).unwrap();
        // Command 3 never occurs, so no context ending in it exists.
        let p = tree.predict(&ids(&[0, 1, 3]));
        // Unigram oracle over commands that have a predecessor.
        let mut unigram = [0.0; 4];
        for s in &corpus {
            for c in &s.commands[1..] {
                unigram[c.index()] += 1.0;
            }
        }
        let total: f64 = unigram.iter().sum();
        for w in 0..4 {
            assert_eq!(p[w], (unigram[w] + 1.0) / (total + 4.0));
        }
    }

    #[test]
    fn parent_closure_without_pruning() {
        let corpus = random_corpus(40, 3, 10, 3);
        let depth = 3;
        let tree = fit_pst(&corpus, 3, depth, 1).unwrap();
        let starts = |ctx: &[CommandId]| {
            let mut n = vec![0u64; 3];
            for s in &corpus {
                if s.commands.len() > ctx.len() && s.commands.starts_with(ctx) {
                    n[s.commands[ctx.len()].index()] += 1;
                }
            }
            n
        };
        let check = |ctx: &[CommandId], node: &PstNode| {
            // The root only counts commands that have a predecessor.
            let mut sum = if ctx.is_empty() {
                vec![0; 3]
            } else {
                starts(ctx)
            };
            for (child, cn) in &tree.nodes {
                if child.len() == ctx.len() + 1 && &child[1..] == ctx {
                    sum.iter_mut().zip(&cn.counts).for_each(|(s, c)| *s += c);
                }
            }
            assert_eq!(sum, node.counts, "context {ctx:?}");
        };
        check(&[], &tree.root);
        for (ctx, node) in &tree.nodes {
            assert!(ctx.len() == 1 || tree.nodes.contains_key(&ctx[1..]));
            if ctx.len() < depth {
                check(ctx, node);
            }
        }
    }

    #[test]
    fn tree_serialization_round_trip() {
        let tree = fit_pst(&random_corpus(20, 4, 21, 6), 4, 3, 2).unwrap();
        let json = serde_json::to_string(&tree).unwrap();
        let back: SuffixTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn dump_nests_children() {
        let vocab = Vocabulary::new(["a", "b"], &[]);
        let tree = fit_pst(&[seq(&[0, 1, 0, 1])], 2, 2, 1).unwrap();
        let text = tree.dump(&vocab);
        assert!(text.starts_with("<null> total=3"));
        assert!(text.contains("\n  a total=2 next=[b:2]"));
        assert!(text.contains("\n    b a total=1 next=[b:1]"));
    }

    fn planted() -> &'static (crate::corpus::SyntheticCorpus, BitermModel, TaskPstEnsemble) {
        static FIXTURE: std::sync::OnceLock<(
            crate::corpus::SyntheticCorpus,
            BitermModel,
            TaskPstEnsemble,
        )> = std::sync::OnceLock::new();
        FIXTURE.get_or_init(|| {
            let spec = SyntheticSpec::new(2, 10, 300, 21);
            let c = generate_synthetic(&spec, 21).unwrap();
            let cfg = BtmConfig {
                k: 2,
                iterations: 50,
                ..Default::default()
            };
            let btm = fit_btm(&c.sequences, &c.vocab, &cfg).unwrap();
            let ens = fit_task_pst(&c.sequences, &btm, 10, 7).unwrap();
            (c, btm, ens)
        })
    }

    #[test]
    fn single_task_ensemble_equals_plain_tree() {
        let (c, _, _) = planted();
        let btm = fit_btm(
            &c.sequences,
            &c.vocab,
            &BtmConfig {
                k: 1,
                iterations: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let ens = fit_task_pst(&c.sequences, &btm, 10, 7).unwrap();
        let tree = fit_pst(&c.sequences, c.vocab.len(), 10, 7).unwrap();
        assert_eq!(ens.trees, vec![tree.clone()]);
        for s in c.sequences.iter().take(20) {
            for t in 0..s.len() {
                assert_eq!(
                    ens.predict(&s.commands[..t]).unwrap(),
                    tree.predict(&s.commands[..t])
                );
            }
        }
    }

    #[test]
    fn planted_tasks_get_their_own_trees() {
        let (c, _, ens) = planted();
        assert_eq!(ens.trees.len(), 2);
        for tree in &ens.trees {
            let seen = tree.observed_commands();
            assert!(!seen.is_empty());
            assert!(c
                .task_slices
                .iter()
                .any(|slice| seen.iter().all(|x| slice.contains(x))));
        }
    }

    #[test]
    fn one_hot_weights_select_a_tree() {
        let (c, _, ens) = planted();
        let prefix = &c.sequences[0].commands[..5];
        assert_eq!(ens.mix(&[0.0, 1.0], prefix), ens.trees[1].predict(prefix));
    }

    #[test]
    fn empty_shard_gives_uniform_tree() {
        let (c, _, _) = planted();
        let tree = fit_pst(&[], c.vocab.len(), 10, 7).unwrap();
        let v = c.vocab.len();
        assert_eq!(tree.predict(&ids(&[1, 2])), vec![1.0 / v as f64; v]);
    }

    proptest! {
        #[test]
        fn node_counts_match_brute_force(seed: u64) {
            let corpus = random_corpus(30, 4, 12, seed);
            let tree = fit_pst(&corpus, 4, 3, 1).unwrap();
            for (ctx, node) in &tree.nodes {
                let mut want = vec![0u64; 4];
                for s in &corpus {
                    for n in ctx.len()..s.commands.len() {
                        if s.commands[n - ctx.len()..n] == ctx[..] {
                            want[s.commands[n].index()] += 1;
                        }
                    }
                }
                prop_assert_eq!(&want, &node.counts);
            }
        }

        #[test]
        fn task_mixture_is_a_convex_combination(t in 0usize..21, d in 0usize..300) {
            let (c, _, ens) = planted();
            let prefix = &c.sequences[d].commands[..t];
            let out = ens.predict(prefix).unwrap();
            prop_assert!(is_distribution(&out));
            let parts: Vec<Vec<f64>> = ens.trees.iter().map(|tr| tr.predict(prefix)).collect();
            for w in 0..out.len() {
                let lo = parts.iter().map(|p| p[w]).fold(f64::INFINITY, f64::min);
                let hi = parts.iter().map(|p| p[w]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[w] >= lo - 1e-12 && out[w] <= hi + 1e-12);
            }
        }
    }
}
