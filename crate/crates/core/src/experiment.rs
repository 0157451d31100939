//! Train-and-evaluate pipelines shared by the command line and the
//! benchmarks: one call trains the requested models on a split and returns
//! their metrics, ready for [`run_trials`](crate::eval::run_trials).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    label_help, match_negative_lengths, sample_negatives, CommandSequence, HelpExample, HelpLabel,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    auroc, precision_recall, topk_accuracies, EvalReport, MetricSummary, Metrics, NextCommandModel,
    ReportKind, ReportRow, AUROC, PRECISION, RECALL, TOP1, TOP5,
};
use crate::help::{
    make_projection, train_help_lstm, FeatureRecipe, ForestConfig, HelpForest, HelpInput, HelpLstm,
    HelpLstmConfig, TimeInput, DEFAULT_PROJECTION_DIM, DEFAULT_THRESHOLD,
};
use crate::markov::{
    fit_first_order, fit_pst, fit_task_pst, FirstOrderModel, SuffixTree, TaskPstEnsemble,
    DEFAULT_MAX_DEPTH, DEFAULT_MIN_COUNT,
};
use crate::nn::recommender::EpochMetrics;
use crate::nn::{train, NetConfig, NetPredictor, RecommenderNet, Variant};
use crate::persist::ModelKind;
use crate::rng::derive_seed;
use crate::topics::{fit_btm, BitermModel, BtmConfig};

/// Hyperparameters of every recommender.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommenderSettings {
    pub btm: BtmConfig,
    pub pst_depth: usize,
    pub pst_min_count: u64,
    /// Shared by the three nets; `variant` and `k` are set per model.
    pub net: NetConfig,
}

impl Default for RecommenderSettings {
    fn default() -> Self {
        RecommenderSettings {
            btm: BtmConfig::default(),
            pst_depth: DEFAULT_MAX_DEPTH,
            pst_min_count: DEFAULT_MIN_COUNT,
            net: NetConfig::default(),
        }
    }
}

/// A trained next-command model of any family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Recommender {
    FirstOrder(FirstOrderModel),
    Pst(SuffixTree),
    TaskPst(TaskPstEnsemble),
    Net(RecommenderNet),
}

impl Recommender {
    /// A prediction interface; task-aware nets read side inputs from `btm`.
    pub fn predictor<'a>(
        &'a self,
        btm: Option<&'a BitermModel>,
    ) -> Result<Box<dyn NextCommandModel + 'a>> {
        Ok(match self {
            Recommender::FirstOrder(m) => Box::new(m),
            Recommender::Pst(m) => Box::new(m),
            Recommender::TaskPst(m) => Box::new(m),
            Recommender::Net(n) => Box::new(NetPredictor::new(n, btm)?),
        })
    }
}

fn net_variant(kind: ModelKind) -> Option<Variant> {
    match kind {
        ModelKind::Vrnn => Some(Variant::Vanilla),
        ModelKind::Taskrnn => Some(Variant::Task),
        ModelKind::Jtcrnn => Some(Variant::Jtc),
        _ => None,
    }
}

/// Trains one recommender. Task-aware kinds require `btm`.
pub fn train_recommender(
    kind: ModelKind,
    vocab: &Vocabulary,
    train_set: &[CommandSequence],
    val_set: &[CommandSequence],
    btm: Option<&BitermModel>,
    settings: &RecommenderSettings,
    seed: u64,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Recommender> {
    let need_btm =
        || btm.ok_or_else(|| Error::InvalidConfig(format!("{kind} needs a fitted topic model")));
    Ok(match kind {
        ModelKind::Firstmm => Recommender::FirstOrder(fit_first_order(train_set, vocab.len())?),
        ModelKind::Pst => Recommender::Pst(fit_pst(
            train_set,
            vocab.len(),
            settings.pst_depth,
            settings.pst_min_count,
        )?),
        ModelKind::Taskpst => Recommender::TaskPst(fit_task_pst(
            train_set,
            need_btm()?,
            settings.pst_depth,
            settings.pst_min_count,
        )?),
        ModelKind::Vrnn | ModelKind::Taskrnn | ModelKind::Jtcrnn => {
            let variant = net_variant(kind).expect("net kind");
            let k = if variant == Variant::Vanilla {
                settings.net.k
            } else {
                need_btm()?.k()
            };
            let cfg = NetConfig {
                variant,
                k,
                seed,
                ..settings.net.clone()
            };
            Recommender::Net(train(&cfg, vocab, train_set, val_set, btm, on_epoch)?.0)
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "{other} is not a recommender"
            )))
        }
    })
}

/// The recommenders compared in the benchmark, in report order.
pub const RECOMMENDERS: [ModelKind; 6] = [
    ModelKind::Firstmm,
    ModelKind::Pst,
    ModelKind::Taskpst,
    ModelKind::Vrnn,
    ModelKind::Taskrnn,
    ModelKind::Jtcrnn,
];

/// One benchmark run: fits the topic model (when needed) and every model in
/// `models`, then reports `"{model}.top1"` and `"{model}.top5"`.
pub fn recommendation_trial(
    models: &[ModelKind],
    vocab: &Vocabulary,
    train_set: &[CommandSequence],
    val_set: &[CommandSequence],
    test_set: &[CommandSequence],
    settings: &RecommenderSettings,
    seed: u64,
) -> Result<Metrics> {
    let btm = if models.iter().any(|m| m.needs_btm()) {
        Some(fit_btm(
            train_set,
            vocab,
            &BtmConfig {
                seed,
                ..settings.btm.clone()
            },
        )?)
    } else {
        None
    };
    let mut out = Metrics::new();
    for &kind in models {
        let model = train_recommender(
            kind,
            vocab,
            train_set,
            val_set,
            btm.as_ref(),
            settings,
            seed,
            |_| {},
        )?;
        let acc = topk_accuracies(&model.predictor(btm.as_ref())?, test_set, &[1, 5])?;
        out.insert(format!("{kind}.{TOP1}"), acc[0]);
        out.insert(format!("{kind}.{TOP5}"), acc[1]);
    }
    Ok(out)
}

/// Groups `"{model}.{metric}"` summaries into report rows.
pub fn report_from_summaries(
    kind: ReportKind,
    runs: usize,
    fingerprint: String,
    summaries: BTreeMap<String, MetricSummary>,
    model_order: &[String],
) -> EvalReport {
    let mut rows: Vec<ReportRow> = model_order
        .iter()
        .map(|m| ReportRow {
            model: m.clone(),
            metrics: BTreeMap::new(),
        })
        .collect();
    for (key, summary) in summaries {
        let Some((model, metric)) = key.rsplit_once('.') else {
            continue;
        };
        if let Some(row) = rows.iter_mut().find(|r| r.model == model) {
            row.metrics.insert(metric.to_string(), summary);
        }
    }
    EvalReport::new(kind, runs, fingerprint, rows)
}

/// Builds the help data set: positives from [`label_help`], and
/// `negative_ratio` times as many help-free negatives (capped by what is
/// available) truncated to the positives' lengths.
pub fn build_help_examples(
    sequences: &[CommandSequence],
    vocab: &Vocabulary,
    k: usize,
    negative_ratio: usize,
    match_lengths: bool,
    seed: u64,
) -> Result<(Vec<HelpExample>, Vec<HelpExample>)> {
    let (positives, rest) = label_help(sequences, vocab.help_ids(), k);
    if rest.is_empty() {
        return Err(Error::EmptyCorpus(
            "no help-free sequences left to sample negatives from".into(),
        ));
    }
    if positives.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let n = (negative_ratio * positives.len()).min(rest.len());
    let mut negatives = sample_negatives(&rest, n, derive_seed(seed, 1))?;
    if match_lengths {
        match_negative_lengths(&mut negatives, &positives, derive_seed(seed, 2));
    }
    Ok((positives, negatives))
}

/// A help model configuration in the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HelpModelSpec {
    Forest,
    LstmCommands,
    LstmTimed,
}

impl HelpModelSpec {
    pub const ALL: [HelpModelSpec; 3] = [
        HelpModelSpec::Forest,
        HelpModelSpec::LstmCommands,
        HelpModelSpec::LstmTimed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            HelpModelSpec::Forest => "Random Forest",
            HelpModelSpec::LstmCommands => "LSTM (Commands only)",
            HelpModelSpec::LstmTimed => "LSTM (Time ⊕ Commands)",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpSettings {
    pub projection_dim: usize,
    pub forest: ForestConfig,
    pub lstm: HelpLstmConfig,
    pub threshold: f64,
}

impl Default for HelpSettings {
    fn default() -> Self {
        HelpSettings {
            projection_dim: DEFAULT_PROJECTION_DIM,
            forest: ForestConfig::default(),
            lstm: HelpLstmConfig::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// A trained help model of either family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HelpModel {
    Forest(HelpForest),
    Lstm(HelpLstm),
}

impl HelpModel {
    /// Sequence-level probability of help.
    pub fn score(&self, seq: &CommandSequence) -> Result<f64> {
        match self {
            HelpModel::Forest(f) => f.score(seq),
            HelpModel::Lstm(m) => m.sequence_score(&HelpInput::new(seq, false)),
        }
    }
}

fn labels(examples: &[HelpExample]) -> Vec<bool> {
    examples
        .iter()
        .map(|e| e.label == HelpLabel::Help)
        .collect()
}

pub fn train_help_model(
    spec: HelpModelSpec,
    vocab: &Vocabulary,
    train_set: &[HelpExample],
    val_set: &[HelpExample],
    settings: &HelpSettings,
    seed: u64,
    on_epoch: impl FnMut(&crate::help::classifier::HelpEpoch),
) -> Result<HelpModel> {
    let time = settings.lstm.time;
    Ok(match spec {
        HelpModelSpec::Forest => {
            let recipe = FeatureRecipe {
                projection: make_projection(
                    vocab.len(),
                    settings.projection_dim,
                    derive_seed(seed, 7),
                )?,
                time: if time.enabled() {
                    time
                } else {
                    TimeInput::Seconds
                },
            };
            let seqs: Vec<CommandSequence> = train_set.iter().map(|e| e.sequence.clone()).collect();
            let cfg = ForestConfig {
                seed,
                ..settings.forest.clone()
            };
            HelpModel::Forest(HelpForest::fit(
                &seqs,
                &labels(train_set),
                recipe,
                &cfg,
                vocab.fingerprint(),
            )?)
        }
        HelpModelSpec::LstmCommands | HelpModelSpec::LstmTimed => {
            let time = match spec {
                HelpModelSpec::LstmCommands => TimeInput::Off,
                _ if time.enabled() => time,
                _ => TimeInput::Seconds,
            };
            let cfg = HelpLstmConfig {
                time,
                seed,
                ..settings.lstm.clone()
            };
            let tr: Vec<HelpInput> = train_set.iter().map(HelpInput::from_example).collect();
            let va: Vec<HelpInput> = val_set.iter().map(HelpInput::from_example).collect();
            HelpModel::Lstm(
                train_help_lstm(&tr, &va, vocab.len(), vocab.fingerprint(), &cfg, on_epoch)?.0,
            )
        }
    })
}

/// Precision and recall at `threshold` and AU-ROC of `model` on `test`.
pub fn evaluate_help(model: &HelpModel, test: &[HelpExample], threshold: f64) -> Result<Metrics> {
    let scores = test
        .iter()
        .map(|e| model.score(&e.sequence))
        .collect::<Result<Vec<_>>>()?;
    let y = labels(test);
    let (p, r) = precision_recall(&scores, &y, threshold)?;
    let mut m = Metrics::new();
    m.insert(PRECISION.to_string(), p);
    m.insert(RECALL.to_string(), r);
    m.insert(AUROC.to_string(), auroc(&scores, &y)?);
    Ok(m)
}

/// One help benchmark run reporting `"{label}.{metric}"` for every spec.
pub fn help_trial(
    specs: &[HelpModelSpec],
    vocab: &Vocabulary,
    train_set: &[HelpExample],
    val_set: &[HelpExample],
    test_set: &[HelpExample],
    settings: &HelpSettings,
    seed: u64,
) -> Result<Metrics> {
    let mut out = Metrics::new();
    for &spec in specs {
        let model = train_help_model(spec, vocab, train_set, val_set, settings, seed, |_| {})?;
        for (k, v) in evaluate_help(&model, test_set, settings.threshold)? {
            out.insert(format!("{}.{k}", spec.label()), v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_by_user, HelpInjection, SyntheticSpec};

    #[test]
    fn help_examples_are_balanced_and_length_matched() {
        let mut spec = SyntheticSpec::new(2, 6, 300, 21);
        spec.help_injection = Some(HelpInjection {
            positive_rate: 0.2,
            loop_rate: 0.5,
            pause_rate: 0.5,
            min_trigger: 9,
        });
        let c = generate_synthetic(&spec, 1).unwrap();
        let (pos, neg) = build_help_examples(&c.sequences, &c.vocab, 8, 3, true, 4).unwrap();
        assert!(!pos.is_empty());
        assert_eq!(
            neg.len(),
            (3 * pos.len()).min(c.struggling.iter().filter(|s| !**s).count())
        );
        let lengths: std::collections::BTreeSet<usize> =
            pos.iter().map(|p| p.sequence.len()).collect();
        assert!(neg.iter().all(|n| lengths.contains(&n.sequence.len())));
        assert!(pos.iter().all(|p| p.sequence.len() > 8));
    }

    #[test]
    fn small_recommendation_trial_reports_every_model() {
        let mut spec = SyntheticSpec::new(2, 5, 120, 21);
        spec.task_mixing = 0.05;
        let c = generate_synthetic(&spec, 3).unwrap();
        let (train_set, test_set) = split_by_user(&c.sequences, 0.25, 0).unwrap();
        let settings = RecommenderSettings {
            btm: BtmConfig {
                k: 2,
                iterations: 20,
                ..Default::default()
            },
            net: NetConfig {
                embed_dim: 4,
                hidden_dim: 6,
                layers: 1,
                max_epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = recommendation_trial(
            &RECOMMENDERS,
            &c.vocab,
            &train_set,
            &test_set,
            &test_set,
            &settings,
            0,
        )
        .unwrap();
        assert_eq!(m.len(), 12);
        for kind in RECOMMENDERS {
            assert!(m[&format!("{kind}.top5")] >= m[&format!("{kind}.top1")]);
        }
        let order: Vec<String> = RECOMMENDERS.iter().map(|k| k.to_string()).collect();
        let summaries = m
            .into_iter()
            .map(|(k, v)| (k, MetricSummary::from_values(vec![v])))
            .collect();
        let report = report_from_summaries(
            ReportKind::Recommendation,
            1,
            String::new(),
            summaries,
            &order,
        );
        assert!(report.render_table().starts_with("Accuracy"));
        assert!(report.rows.iter().all(|r| r.metrics.len() == 2));
    }
}
