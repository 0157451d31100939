//! Biterm topic model over command sequences.
//!
//! Every sequence is a short document; every unordered pair of positions in
//! it is a biterm. A collapsed Gibbs sampler assigns one topic (task) per
//! biterm. Task distributions of new sequences and prefixes are computed in
//! closed form from the fitted `phi`/`theta` without further sampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommandId, CommandSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BtmConfig {
    /// Number of tasks.
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for BtmConfig {
    fn default() -> Self {
        BtmConfig {
            k: 14,
            alpha: 0.001,
            beta: 0.005,
            iterations: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigWarning {
    /// More topics than distinct biterm types.
    TooManyTopics { k: usize, biterm_types: usize },
}

impl BtmConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<Vec<ConfigWarning>> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0)
            || !self.alpha.is_finite()
            || !self.beta.is_finite()
        {
            return Err(Error::InvalidConfig(
                "alpha and beta must be positive".into(),
            ));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.k > u16::MAX as usize {
            return Err(Error::InvalidConfig("K is too large".into()));
        }
        let mut warnings = Vec::new();
        let biterm_types = vocab_size.saturating_mul(vocab_size);
        if self.k > biterm_types {
            warnings.push(ConfigWarning::TooManyTopics {
                k: self.k,
                biterm_types,
            });
        }
        Ok(warnings)
    }
}

/// Unordered command pair, stored with `w1 <= w2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Biterm {
    pub w1: CommandId,
    pub w2: CommandId,
}

impl Biterm {
    pub fn new(a: CommandId, b: CommandId) -> Self {
        if a <= b {
            Biterm { w1: a, w2: b }
        } else {
            Biterm { w1: b, w2: a }
        }
    }
}

/// All pairs of distinct positions, ordered by the later position first
/// and then the earlier one, so the biterms of a prefix are a prefix of the
/// biterms of the whole sequence.
pub fn extract_biterms(commands: &[CommandId]) -> Vec<Biterm> {
    let n = commands.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 1..n {
        for i in 0..j {
            out.push(Biterm::new(commands[i], commands[j]));
        }
    }
    out
}

/// A point on the probability simplex over tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskDistribution(Vec<f64>);

impl TaskDistribution {
    /// Normalizes non-negative weights; all-zero weights become uniform.
    pub fn from_weights(mut w: Vec<f64>) -> Self {
        let sum: f64 = w.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            w.iter_mut().for_each(|x| *x /= sum);
        } else {
            let n = w.len() as f64;
            w.iter_mut().for_each(|x| *x = 1.0 / n);
        }
        TaskDistribution(w)
    }

    pub fn one_hot(k: usize, z: usize) -> Self {
        let mut w = vec![0.0; k];
        w[z] = 1.0;
        TaskDistribution(w)
    }

    pub fn uniform(k: usize) -> Self {
        TaskDistribution(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        crate::argmax(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitermModel {
    pub config: BtmConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    /// `k x vocab_size`, row-major; `phi[z * V + w] = P(w | z)`.
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
}

impl BitermModel {
    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn phi_row(&self, z: usize) -> &[f64] {
        &self.phi[z * self.vocab_size..(z + 1) * self.vocab_size]
    }

    fn check(&self, c: CommandId) -> Result<()> {
        if c.index() < self.vocab_size {
            Ok(())
        } else {
            Err(Error::CommandOutOfRange {
                id: c.index(),
                size: self.vocab_size,
            })
        }
    }

    /// Writes `P(z | b)` for one biterm into `out` (unnormalized sum returned
    /// separately so callers can normalize in place).
    fn biterm_posterior(&self, b: Biterm, out: &mut [f64]) {
        let v = self.vocab_size;
        let mut sum = 0.0;
        for (z, o) in out.iter_mut().enumerate() {
            let p = self.theta[z] * self.phi[z * v + b.w1.index()] * self.phi[z * v + b.w2.index()];
            *o = p;
            sum += p;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }

    /// Task distributions of every prefix: element `t` covers commands
    /// `0..=t`. The first element (a single command, no biterm) is `theta`.
    pub fn prefix_distributions(&self, commands: &[CommandId]) -> Result<Vec<TaskDistribution>> {
        for &c in commands {
            self.check(c)?;
        }
        let k = self.k();
        let mut out = Vec::with_capacity(commands.len());
        if commands.is_empty() {
            return Ok(out);
        }
        out.push(TaskDistribution(self.theta.clone()));
        let mut acc = vec![0.0; k];
        let mut post = vec![0.0; k];
        let mut count = 0usize;
        for j in 1..commands.len() {
            for i in 0..j {
                self.biterm_posterior(Biterm::new(commands[i], commands[j]), &mut post);
                for z in 0..k {
                    acc[z] += post[z];
                }
                count += 1;
            }
            out.push(TaskDistribution(
                acc.iter().map(|a| a / count as f64).collect(),
            ));
        }
        Ok(out)
    }

    /// Fold-in estimate `P(z | d) = sum_b P(z | b) P(b | d)` with `P(b | d)`
    /// uniform over the document's biterms. Fewer than two commands give
    /// `theta`.
    pub fn infer(&self, commands: &[CommandId]) -> Result<TaskDistribution> {
        if commands.len() < 2 {
            for &c in commands {
                self.check(c)?;
            }
            return Ok(TaskDistribution(self.theta.clone()));
        }
        Ok(self
            .prefix_distributions(commands)?
            .pop()
            .expect("non-empty"))
    }

    /// The `n` most probable commands of task `z`, ties to the lower id.
    pub fn top_commands(&self, z: usize, n: usize) -> Result<Vec<(CommandId, f64)>> {
        if z >= self.k() {
            return Err(Error::InvalidConfig(format!(
                "task {z} out of range for K = {}",
                self.k()
            )));
        }
        let row = self.phi_row(z);
        Ok(crate::ranked_indices(row)
            .into_iter()
            .take(n.min(self.vocab_size))
            .map(|w| (CommandId::from(w), row[w]))
            .collect())
    }
}

pub fn infer_task_distribution(
    model: &BitermModel,
    prefix: &CommandSequence,
) -> Result<TaskDistribution> {
    model.infer(&prefix.commands)
}

pub fn top_commands(model: &BitermModel, z: usize, n: usize) -> Result<Vec<(CommandId, f64)>> {
    model.top_commands(z, n)
}

/// Collapsed Gibbs sampler state. Exposed so that the count bookkeeping can
/// be checked sweep by sweep.
pub struct GibbsSampler {
    cfg: BtmConfig,
    vocab_size: usize,
    biterms: Vec<Biterm>,
    assignment: Vec<u16>,
    /// Biterms assigned to each topic.
    n_z: Vec<u64>,
    /// `k x V` word-slot counts; each biterm adds one to each of its words.
    n_wz: Vec<u64>,
    rng: Rng,
    weights: Vec<f64>,
}

impl GibbsSampler {
    pub fn new(corpus: &[CommandSequence], vocab_size: usize, cfg: &BtmConfig) -> Result<Self> {
        cfg.validate(vocab_size)?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus(
                "cannot fit a topic model on no documents".into(),
            ));
        }
        let mut biterms = Vec::new();
        for seq in corpus {
            for &c in &seq.commands {
                if c.index() >= vocab_size {
                    return Err(Error::CommandOutOfRange {
                        id: c.index(),
                        size: vocab_size,
                    });
                }
            }
            biterms.extend(extract_biterms(&seq.commands));
        }
        let k = cfg.k;
        let mut rng = rng::seeded(cfg.seed);
        let mut n_z = vec![0u64; k];
        let mut n_wz = vec![0u64; k * vocab_size];
        let assignment: Vec<u16> = biterms
            .iter()
            .map(|b| {
                let z = rng.gen_range(0..k);
                n_z[z] += 1;
                n_wz[z * vocab_size + b.w1.index()] += 1;
                n_wz[z * vocab_size + b.w2.index()] += 1;
                z as u16
            })
            .collect();
        Ok(GibbsSampler {
            cfg: cfg.clone(),
            vocab_size,
            biterms,
            assignment,
            n_z,
            n_wz,
            rng,
            weights: vec![0.0; k],
        })
    }

    pub fn num_biterms(&self) -> usize {
        self.biterms.len()
    }

    /// One pass over all biterms, resampling each topic from its full
    /// conditional given every other assignment.
    pub fn sweep(&mut self) {
        let k = self.cfg.k;
        let v = self.vocab_size;
        let vb = v as f64 * self.cfg.beta;
        let (alpha, beta) = (self.cfg.alpha, self.cfg.beta);
        for (idx, b) in self.biterms.iter().enumerate() {
            let (w1, w2) = (b.w1.index(), b.w2.index());
            let old = self.assignment[idx] as usize;
            self.n_z[old] -= 1;
            self.n_wz[old * v + w1] -= 1;
            self.n_wz[old * v + w2] -= 1;

            let same = if w1 == w2 { 1.0 } else { 0.0 };
            let mut total = 0.0;
            for z in 0..k {
                let slots = 2.0 * self.n_z[z] as f64;
                let p = (self.n_z[z] as f64 + alpha)
                    * (self.n_wz[z * v + w1] as f64 + beta)
                    * (self.n_wz[z * v + w2] as f64 + beta + same)
                    / ((slots + vb) * (slots + 1.0 + vb));
                total += p;
                self.weights[z] = total;
            }
            let u = self.rng.gen::<f64>() * total;
            let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

            self.assignment[idx] = new as u16;
            self.n_z[new] += 1;
            self.n_wz[new * v + w1] += 1;
            self.n_wz[new * v + w2] += 1;
        }
    }

    /// `sum_z n_z = |B|` and `sum_w n_{w|z} = 2 n_z` for every topic.
    pub fn counts_consistent(&self) -> bool {
        let v = self.vocab_size;
        let total: u64 = self.n_z.iter().sum();
        total as usize == self.biterms.len()
            && (0..self.cfg.k)
                .all(|z| self.n_wz[z * v..(z + 1) * v].iter().sum::<u64>() == 2 * self.n_z[z])
    }

    pub fn into_model(self, vocab_hash: String) -> BitermModel {
        let k = self.cfg.k;
        let v = self.vocab_size;
        let mut phi = vec![0.0; k * v];
        for z in 0..k {
            let denom = 2.0 * self.n_z[z] as f64 + v as f64 * self.cfg.beta;
            for w in 0..v {
                phi[z * v + w] = (self.n_wz[z * v + w] as f64 + self.cfg.beta) / denom;
            }
        }
        let nb = self.biterms.len() as f64;
        let theta = self
            .n_z
            .iter()
            .map(|&n| (n as f64 + self.cfg.alpha) / (nb + k as f64 * self.cfg.alpha))
            .collect();
        BitermModel {
            config: self.cfg,
            vocab_size: v,
            vocab_hash,
            phi,
            theta,
        }
    }
}

/// Fits a biterm topic model with `cfg.iterations` Gibbs sweeps and reads
/// `phi`/`theta` off the final state.
pub fn fit_btm(
    corpus: &[CommandSequence],
    vocab: &Vocabulary,
    cfg: &BtmConfig,
) -> Result<BitermModel> {
    let mut sampler = GibbsSampler::new(corpus, vocab.len(), cfg)?;
    for _ in 0..cfg.iterations {
        sampler.sweep();
    }
    Ok(sampler.into_model(vocab.fingerprint()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<CommandId> {
        v.iter().map(|&i| CommandId(i)).collect()
    }

    #[test]
    fn biterm_enumeration() {
        let b = extract_biterms(&ids(&[0, 1, 2]));
        let mut set: Vec<(u32, u32)> = b.iter().map(|b| (b.w1.0, b.w2.0)).collect();
        set.sort();
        assert_eq!(set, [(0, 1), (0, 2), (1, 2)]);
        let b = extract_biterms(&ids(&[4, 4]));
        assert_eq!(b, vec![Biterm::new(CommandId(4), CommandId(4))]);
        assert_eq!(extract_biterms(&ids(&[3; 21])).len(), 210);
        assert!(extract_biterms(&ids(&[1])).is_empty());
        assert_eq!(Biterm::new(CommandId(5), CommandId(2)).w1, CommandId(2));
    }

    fn small_corpus() -> (Vec<CommandSequence>, Vocabulary) {
        let spec = SyntheticSpec::new(2, 5, 60, 12);
        let c = generate_synthetic(&spec, 4).unwrap();
        (c.sequences, c.vocab)
    }

    #[test]
    fn single_topic_collapses_to_smoothed_frequencies() {
        let (corpus, vocab) = small_corpus();
        let cfg = BtmConfig {
            k: 1,
            iterations: 3,
            ..Default::default()
        };
        let m = fit_btm(&corpus, &vocab, &cfg).unwrap();
        assert_eq!(m.theta, vec![1.0]);
        // Each biterm contributes one slot per word, so a word's slot count
        // is its corpus frequency weighted by (document length - 1).
        let v = vocab.len();
        let mut slots = vec![0.0; v];
        for s in &corpus {
            for c in &s.commands {
                slots[c.index()] += (s.len() - 1) as f64;
            }
        }
        let total: f64 = slots.iter().sum();
        for (w, &slot) in slots.iter().enumerate() {
            let want = (slot + cfg.beta) / (total + v as f64 * cfg.beta);
            assert!((m.phi[w] - want).abs() < 1e-12);
        }
        for s in corpus.iter().take(5) {
            assert_eq!(m.infer(&s.commands).unwrap().probs(), &[1.0]);
        }
    }

    #[test]
    fn default_hyperparameters_need_no_warning() {
        assert!(BtmConfig::default().validate(300).unwrap().is_empty());
        let cfg = BtmConfig {
            k: 5,
            ..Default::default()
        };
        assert_eq!(cfg.validate(2).unwrap().len(), 1);
        assert!(BtmConfig {
            alpha: 0.0,
            ..Default::default()
        }
        .validate(10)
        .is_err());
        assert!(BtmConfig {
            k: 0,
            ..Default::default()
        }
        .validate(10)
        .is_err());
    }

    #[test]
    fn counts_stay_consistent_every_sweep() {
        let (corpus, vocab) = small_corpus();
        let cfg = BtmConfig {
            k: 4,
            iterations: 10,
            ..Default::default()
        };
        let mut s = GibbsSampler::new(&corpus, vocab.len(), &cfg).unwrap();
        assert!(s.counts_consistent());
        for _ in 0..10 {
            s.sweep();
            assert!(s.counts_consistent());
        }
    }

    #[test]
    fn fitted_model_is_normalized_and_deterministic() {
        let (corpus, vocab) = small_corpus();
        let cfg = BtmConfig {
            k: 3,
            iterations: 20,
            seed: 5,
            ..Default::default()
        };
        let a = fit_btm(&corpus, &vocab, &cfg).unwrap();
        let b = fit_btm(&corpus, &vocab, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for z in 0..3 {
            assert!((a.phi_row(z).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(a.phi_row(z).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn empty_corpus_and_bad_ids_are_errors() {
        let vocab = Vocabulary::new(["a", "b"], &[]);
        assert!(matches!(
            fit_btm(&[], &vocab, &BtmConfig::default()),
            Err(Error::EmptyCorpus(_))
        ));
        let bad = vec![CommandSequence::new("u", ids(&[0, 7]))];
        assert!(fit_btm(&bad, &vocab, &BtmConfig::default()).is_err());
    }

    #[test]
    fn short_prefix_falls_back_to_theta() {
        let (corpus, vocab) = small_corpus();
        let m = fit_btm(
            &corpus,
            &vocab,
            &BtmConfig {
                k: 2,
                iterations: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.infer(&ids(&[1])).unwrap().probs(), &m.theta[..]);
        assert_eq!(m.infer(&[]).unwrap().probs(), &m.theta[..]);
        assert!(m.infer(&ids(&[1, 99])).is_err());
    }

    #[test]
    fn top_commands_ranking() {
        let (corpus, vocab) = small_corpus();
        let m = fit_btm(
            &corpus,
            &vocab,
            &BtmConfig {
                k: 2,
                iterations: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let top1 = m.top_commands(0, 1).unwrap();
        assert_eq!(top1[0].0.index(), crate::argmax(m.phi_row(0)));
        let all = m.top_commands(1, 1000).unwrap();
        let mut seen: Vec<usize> = all.iter().map(|(c, _)| c.index()).collect();
        seen.sort();
        assert_eq!(seen, (0..vocab.len()).collect::<Vec<_>>());
        assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(m.top_commands(2, 3).is_err());
    }

    proptest! {
        #[test]
        fn prefix_distributions_match_direct_inference(
            raw in prop::collection::vec(0u32..10, 1..22),
            seed in 0u64..4,
        ) {
            let (corpus, vocab) = small_corpus();
            let m = fit_btm(&corpus, &vocab, &BtmConfig { k: 3, iterations: 3, seed, ..Default::default() }).unwrap();
            let cmds = ids(&raw);
            let prefixes = m.prefix_distributions(&cmds).unwrap();
            prop_assert_eq!(prefixes.len(), cmds.len());
            for (t, d) in prefixes.iter().enumerate() {
                let direct = m.infer(&cmds[..=t]).unwrap();
                prop_assert_eq!(d, &direct);
                prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
                prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
