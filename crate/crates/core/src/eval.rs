//! Metrics and the multi-run experiment harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CommandId, CommandSequence};
use crate::error::{Error, Result};

/// Anything that maps a command prefix to a distribution over the next
/// command.
pub trait NextCommandModel {
    fn vocab_size(&self) -> usize;

    /// Distribution over the command following `prefix`.
    fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>>;

    /// Predictions for every prefix `seq[..=t]` at once, for models whose
    /// output at `t` cannot depend on later commands. Must agree with
    /// [`predict`](Self::predict) prefix by prefix.
    fn predict_steps(&self, _seq: &[CommandId]) -> Option<Result<Vec<Vec<f64>>>> {
        None
    }

    /// The `top_k` most probable next commands, ties to the lower id.
    fn recommend(&self, prefix: &[CommandId], top_k: usize) -> Result<Vec<(CommandId, f64)>> {
        if top_k < 1 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        let p = self.predict(prefix)?;
        Ok(crate::ranked_indices(&p)
            .into_iter()
            .take(top_k)
            .map(|w| (CommandId::from(w), p[w]))
            .collect())
    }
}

impl<T: NextCommandModel + ?Sized> NextCommandModel for &T {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>> {
        (**self).predict(prefix)
    }
    fn predict_steps(&self, seq: &[CommandId]) -> Option<Result<Vec<Vec<f64>>>> {
        (**self).predict_steps(seq)
    }
}

impl<T: NextCommandModel + ?Sized> NextCommandModel for Box<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>> {
        (**self).predict(prefix)
    }
    fn predict_steps(&self, seq: &[CommandId]) -> Option<Result<Vec<Vec<f64>>>> {
        (**self).predict_steps(seq)
    }
}

/// First evaluated position: predictions need at least one context command
/// before it, i.e. prefix `seq[..=1]` predicts `seq[2]`.
pub const FIRST_EVAL_POSITION: usize = 1;

/// Zero-based rank of `truth` under descending probability with ties broken
/// by lower id.
pub fn rank_of(probs: &[f64], truth: CommandId) -> usize {
    let t = truth.index();
    let pt = probs[t];
    probs
        .iter()
        .enumerate()
        .filter(|&(w, &p)| p > pt || (p == pt && w < t))
        .count()
}

/// Top-k accuracy for each `k` in `ks`, over every evaluation point
/// `t in FIRST_EVAL_POSITION..=len-2` of every test sequence.
pub fn topk_accuracies<M: NextCommandModel + ?Sized>(
    model: &M,
    test: &[CommandSequence],
    ks: &[usize],
) -> Result<Vec<f64>> {
    let mut hits = vec![0usize; ks.len()];
    let mut points = 0usize;
    for seq in test {
        let c = &seq.commands;
        if c.len() < FIRST_EVAL_POSITION + 2 {
            continue;
        }
        let steps = match model.predict_steps(&c[..c.len() - 1]) {
            Some(all) => Some(all?),
            None => None,
        };
        for t in FIRST_EVAL_POSITION..c.len() - 1 {
            let rank = match &steps {
                Some(all) => rank_of(&all[t], c[t + 1]),
                None => rank_of(&model.predict(&c[..=t])?, c[t + 1]),
            };
            for (h, &k) in hits.iter_mut().zip(ks) {
                if rank < k {
                    *h += 1;
                }
            }
            points += 1;
        }
    }
    if points == 0 {
        return Err(Error::EmptyCorpus(
            "no evaluation points in the test set".into(),
        ));
    }
    Ok(hits.into_iter().map(|h| h as f64 / points as f64).collect())
}

pub fn topk_accuracy<M: NextCommandModel + ?Sized>(
    model: &M,
    test: &[CommandSequence],
    k: usize,
) -> Result<f64> {
    Ok(topk_accuracies(model, test, &[k])?[0])
}

/// Precision and recall of the rule `score >= threshold`. Precision with no
/// predicted positives is 0.
pub fn precision_recall(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let mut tp = 0usize;
    let mut predicted = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= threshold {
            predicted += 1;
            if l {
                tp += 1;
            }
        }
    }
    let precision = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    Ok((precision, tp as f64 / positives as f64))
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&o| labels[o]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean and sample standard deviation of one metric over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MetricSummary { mean, std, values }
    }
}

pub type Metrics = BTreeMap<String, f64>;

/// Runs `run` with seeds `base_seed + 0 .. base_seed + n - 1` and summarizes
/// every metric it reports. The first failing run aborts the whole trial.
pub fn run_trials<F>(
    n: usize,
    base_seed: u64,
    mut run: F,
) -> Result<BTreeMap<String, MetricSummary>>
where
    F: FnMut(u64) -> Result<Metrics>,
{
    if n < 1 {
        return Err(Error::InvalidConfig("at least one run is required".into()));
    }
    let mut collected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for i in 0..n {
        let seed = base_seed.wrapping_add(i as u64);
        let metrics = run(seed).map_err(|e| Error::RunFailed {
            seed,
            source: Box::new(e),
        })?;
        for (name, v) in metrics {
            collected.entry(name).or_default().push(v);
        }
    }
    Ok(collected
        .into_iter()
        .map(|(k, v)| (k, MetricSummary::from_values(v)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Recommendation,
    Help,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ReportKind,
    pub runs: usize,
    pub fingerprint: String,
    pub rows: Vec<ReportRow>,
}

pub const TOP1: &str = "top1";
pub const TOP5: &str = "top5";
pub const PRECISION: &str = "precision";
pub const RECALL: &str = "recall";
pub const AUROC: &str = "auroc";

/// Display order and labels of recommender columns.
pub const RECOMMENDER_ORDER: [(&str, &str); 6] = [
    ("firstmm", "FirstMM"),
    ("pst", "PST"),
    ("taskpst", "TaskPST"),
    ("vrnn", "vRNN"),
    ("taskrnn", "TaskRNN"),
    ("jtcrnn", "JTC-RNN"),
];

fn display_name(model: &str) -> String {
    RECOMMENDER_ORDER
        .iter()
        .find(|(k, _)| *k == model)
        .map(|(_, d)| d.to_string())
        .unwrap_or_else(|| model.to_string())
}

impl EvalReport {
    /// Rows are reordered into the canonical recommender order; unknown
    /// models keep their relative order at the end.
    pub fn new(
        kind: ReportKind,
        runs: usize,
        fingerprint: String,
        mut rows: Vec<ReportRow>,
    ) -> Self {
        if kind == ReportKind::Recommendation {
            let pos = |m: &str| {
                RECOMMENDER_ORDER
                    .iter()
                    .position(|(k, _)| *k == m)
                    .unwrap_or(usize::MAX)
            };
            rows.sort_by_key(|r| pos(&r.model));
        }
        EvalReport {
            kind,
            runs,
            fingerprint,
            rows,
        }
    }

    /// Aligned text table: models as columns for recommenders, as rows for
    /// help models.
    pub fn render_table(&self) -> String {
        let cell = |m: Option<&MetricSummary>, spread: bool| match m {
            Some(m) if spread => format!("{:.2} ± {:.2}", m.mean, m.std),
            Some(m) => format!("{:.3}", m.mean),
            None => "-".to_string(),
        };
        let mut out = String::new();
        match self.kind {
            ReportKind::Recommendation => {
                let names: Vec<String> = self.rows.iter().map(|r| display_name(&r.model)).collect();
                let lines: Vec<(&str, Vec<String>)> = [(TOP1, "Top 1"), (TOP5, "Top 5")]
                    .into_iter()
                    .map(|(key, label)| {
                        (
                            label,
                            self.rows
                                .iter()
                                .map(|r| cell(r.metrics.get(key), self.runs > 1))
                                .collect(),
                        )
                    })
                    .collect();
                let width = names
                    .iter()
                    .chain(lines.iter().flat_map(|(_, cells)| cells))
                    .map(|c| c.chars().count())
                    .max()
                    .unwrap_or(0)
                    .max(7);
                let _ = write!(out, "{:<10}", "Accuracy");
                for n in &names {
                    let _ = write!(out, " | {n:>width$}");
                }
                out.push('\n');
                for (label, cells) in &lines {
                    let _ = write!(out, "{label:<10}");
                    for c in cells {
                        let _ = write!(out, " | {c:>width$}");
                    }
                    out.push('\n');
                }
            }
            ReportKind::Help => {
                let width = self
                    .rows
                    .iter()
                    .map(|r| r.model.chars().count())
                    .max()
                    .unwrap_or(0)
                    .max(22);
                let _ = writeln!(
                    out,
                    "{:<width$} | {:>12} | {:>12} | {:>12}",
                    "Help Prediction Models", "Precision", "Recall", "AU-ROC"
                );
                for r in &self.rows {
                    let _ = writeln!(
                        out,
                        "{:<width$} | {:>12} | {:>12} | {:>12}",
                        r.model,
                        cell(r.metrics.get(PRECISION), true),
                        cell(r.metrics.get(RECALL), true),
                        cell(r.metrics.get(AUROC), true),
                    );
                }
            }
        }
        out
    }
}

/// Hex digest over configuration parts (hyperparameters, file digests).
pub fn fingerprint<I, B>(parts: I) -> String
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize()[..16]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
