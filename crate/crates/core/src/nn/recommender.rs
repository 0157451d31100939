//! Recurrent next-command recommenders.
//!
//! All three variants are autoregressive: at step `t` the net reads `c_t`
//! and emits a distribution over `c_{t+1}`.
//!
//! * `Vanilla` reads the command embedding alone.
//! * `Task` appends a fixed task distribution to every input: the whole
//!   sequence's distribution during training, the observed prefix's during
//!   evaluation.
//! * `Jtc` adds a task sub-network. It reads the embedding plus the running
//!   prefix task distribution, predicts the whole-sequence distribution with a
//!   softmax head, and that prediction is appended to the command network's
//!   input. Training adds `kl_weight * KL(T_S || predicted)` to the loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{clip_global_norm, Adam};
use super::lstm::{LstmStack, StackTrace};
use super::params::{
    cross_entropy, matvec_add, matvec_t_add, outer_add, softmax, ParamLayout, TensorKind,
};
use crate::corpus::{CommandId, CommandSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{topk_accuracies, NextCommandModel};
use crate::rng;
use crate::topics::{BitermModel, TaskDistribution};

/// Lower clamp on predicted task probabilities inside the KL term.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Task,
    Jtc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub variant: Variant,
    /// Task count; ignored by the vanilla variant.
    pub k: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: f64,
    pub kl_weight: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            embed_dim: 32,
            hidden_dim: 64,
            layers: 2,
            variant: Variant::Vanilla,
            k: 14,
            lr: 1e-3,
            max_epochs: 50,
            patience: 5,
            batch_size: 32,
            seed: 0,
            grad_clip: 5.0,
            kl_weight: 1.0,
        }
    }
}

impl NetConfig {
    pub fn side_dim(&self) -> usize {
        match self.variant {
            Variant::Vanilla => 0,
            Variant::Task | Variant::Jtc => self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1 || self.hidden_dim < 1 || self.layers < 1 {
            return Err(Error::InvalidConfig(
                "network dimensions must be at least 1".into(),
            ));
        }
        if self.variant != Variant::Vanilla && self.k < 1 {
            return Err(Error::InvalidConfig(
                "task-aware variants need K >= 1".into(),
            ));
        }
        if self.batch_size < 1 || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(
                "batch size and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NetLayout {
    pub params: ParamLayout,
    pub embedding: usize,
    pub cmd: LstmStack,
    pub out_w: usize,
    pub out_b: usize,
    pub task: Option<TaskModule>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TaskModule {
    pub stack: LstmStack,
    pub head_w: usize,
    pub head_b: usize,
}

impl NetLayout {
    fn new(cfg: &NetConfig, vocab_size: usize) -> Self {
        let mut params = ParamLayout::default();
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        let embedding = params.alloc("embedding", vocab_size, e, TensorKind::Weight);
        let cmd = LstmStack::alloc(&mut params, "cmd", e + cfg.side_dim(), h, cfg.layers);
        let out_w = params.alloc("out.w", vocab_size, h, TensorKind::Weight);
        let out_b = params.alloc("out.b", vocab_size, 1, TensorKind::Bias);
        let task = (cfg.variant == Variant::Jtc).then(|| {
            let stack = LstmStack::alloc(&mut params, "task", e + cfg.k, h, cfg.layers);
            let head_w = params.alloc("task_head.w", cfg.k, h, TensorKind::Weight);
            let head_b = params.alloc("task_head.b", cfg.k, 1, TensorKind::Bias);
            TaskModule {
                stack,
                head_w,
                head_b,
            }
        });
        NetLayout {
            params,
            embedding,
            cmd,
            out_w,
            out_b,
            task,
        }
    }
}

/// Side information for one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Side<'a> {
    None,
    /// The same task distribution at every step (task variant).
    Constant(&'a TaskDistribution),
    /// Prefix task distribution `T_{S^t}` per step (jtc variant).
    PerStep(&'a [TaskDistribution]),
}

/// Per-step outputs of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `probs[t]` predicts the command after position `t`.
    pub probs: Vec<Vec<f64>>,
    /// Predicted whole-sequence task distribution per step (jtc only).
    pub task_hat: Option<Vec<TaskDistribution>>,
}

/// One teacher-forced training sequence with its precomputed side inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub commands: Vec<CommandId>,
    pub side: ExampleSide,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExampleSide {
    None,
    Constant(Vec<f64>),
    Jtc {
        prefix: Vec<Vec<f64>>,
        target: Vec<f64>,
    },
}

impl TrainExample {
    /// Builds the training view of a sequence: the task variant sees the
    /// whole sequence's task distribution; jtc sees prefix distributions and
    /// learns to predict the whole-sequence one.
    pub fn new(seq: &[CommandId], variant: Variant, btm: Option<&BitermModel>) -> Result<Self> {
        let need_btm = || {
            btm.ok_or_else(|| Error::InvalidConfig("task-aware variants need a topic model".into()))
        };
        let side = match variant {
            Variant::Vanilla => ExampleSide::None,
            Variant::Task => ExampleSide::Constant(need_btm()?.infer(seq)?.probs().to_vec()),
            Variant::Jtc => {
                let btm = need_btm()?;
                let prefix = btm
                    .prefix_distributions(seq)?
                    .into_iter()
                    .map(|d| d.probs().to_vec())
                    .collect();
                ExampleSide::Jtc {
                    prefix,
                    target: btm.infer(seq)?.probs().to_vec(),
                }
            }
        };
        Ok(TrainExample {
            commands: seq.to_vec(),
            side,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetFile", into = "NetFile")]
pub struct RecommenderNet {
    pub config: NetConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub params: Vec<f64>,
    layout: NetLayout,
}

pub const NET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetFile {
    format_version: u32,
    config: NetConfig,
    vocab_size: usize,
    vocab_hash: String,
    params: Vec<f64>,
}

impl From<RecommenderNet> for NetFile {
    fn from(n: RecommenderNet) -> Self {
        NetFile {
            format_version: NET_FORMAT_VERSION,
            config: n.config,
            vocab_size: n.vocab_size,
            vocab_hash: n.vocab_hash,
            params: n.params,
        }
    }
}

impl TryFrom<NetFile> for RecommenderNet {
    type Error = Error;

    fn try_from(f: NetFile) -> Result<Self> {
        if f.format_version != NET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "network format version {}",
                f.format_version
            )));
        }
        RecommenderNet::from_params(f.config, f.vocab_size, f.vocab_hash, f.params)
    }
}

/// Intermediate values of one sequence's forward pass.
struct Trace {
    task: Option<(StackTrace, Vec<Vec<f64>>)>,
    cmd: StackTrace,
    logits: Vec<Vec<f64>>,
}

impl RecommenderNet {
    pub fn new(config: NetConfig, vocab_size: usize, vocab_hash: String) -> Result<Self> {
        config.validate()?;
        let layout = NetLayout::new(&config, vocab_size);
        let params = layout.params.init(config.seed);
        Ok(RecommenderNet {
            config,
            vocab_size,
            vocab_hash,
            params,
            layout,
        })
    }

    pub fn from_params(
        config: NetConfig,
        vocab_size: usize,
        vocab_hash: String,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = NetLayout::new(&config, vocab_size);
        if params.len() != layout.params.total {
            return Err(Error::DimensionMismatch {
                expected: layout.params.total,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(RecommenderNet {
            config,
            vocab_size,
            vocab_hash,
            params,
            layout,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn tensors(&self) -> &[super::params::Tensor] {
        &self.layout.params.tensors
    }

    fn embed<'p>(&self, p: &'p [f64], c: CommandId) -> &'p [f64] {
        let e = self.config.embed_dim;
        let o = self.layout.embedding + c.index() * e;
        &p[o..o + e]
    }

    fn check_commands(&self, commands: &[CommandId]) -> Result<()> {
        for c in commands {
            if c.index() >= self.vocab_size {
                return Err(Error::CommandOutOfRange {
                    id: c.index(),
                    size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn run(&self, p: &[f64], commands: &[CommandId], side: &ExampleSide) -> Trace {
        let e = self.config.embed_dim;
        let n = commands.len();
        let task = self.layout.task.as_ref().map(|tm| {
            let ExampleSide::Jtc { prefix, .. } = side else {
                unreachable!("validated by caller")
            };
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    let mut x = self.embed(p, commands[t]).to_vec();
                    x.extend_from_slice(&prefix[t]);
                    x
                })
                .collect();
            let trace = tm.stack.forward(p, inputs);
            let k = self.config.k;
            let hsz = tm.stack.hidden();
            let hats = (0..n)
                .map(|t| {
                    let mut u = p[tm.head_b..tm.head_b + k].to_vec();
                    matvec_add(&p[tm.head_w..tm.head_w + k * hsz], trace.top(t), &mut u);
                    softmax(&u)
                })
                .collect::<Vec<_>>();
            (trace, hats)
        });
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let mut x = Vec::with_capacity(e + self.config.side_dim());
                x.extend_from_slice(self.embed(p, commands[t]));
                match (side, &task) {
                    (ExampleSide::Constant(s), _) => x.extend_from_slice(s),
                    (ExampleSide::Jtc { .. }, Some((_, hats))) => x.extend_from_slice(&hats[t]),
                    _ => {}
                }
                x
            })
            .collect();
        let cmd = self.layout.cmd.forward(p, inputs);
        let v = self.vocab_size;
        let hsz = self.layout.cmd.hidden();
        let logits = (0..n)
            .map(|t| {
                let mut l = p[self.layout.out_b..self.layout.out_b + v].to_vec();
                matvec_add(
                    &p[self.layout.out_w..self.layout.out_w + v * hsz],
                    cmd.top(t),
                    &mut l,
                );
                l
            })
            .collect();
        Trace { task, cmd, logits }
    }

    fn check_side(&self, side: &ExampleSide, steps: usize) -> Result<()> {
        let k = self.config.k;
        let dims = |v: &[f64]| {
            if v.len() == k {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: k,
                    got: v.len(),
                })
            }
        };
        match (self.config.variant, side) {
            (Variant::Vanilla, ExampleSide::None) => Ok(()),
            (Variant::Task, ExampleSide::Constant(s)) => dims(s),
            (Variant::Jtc, ExampleSide::Jtc { prefix, target }) => {
                if prefix.len() < steps {
                    return Err(Error::DimensionMismatch {
                        expected: steps,
                        got: prefix.len(),
                    });
                }
                prefix.iter().try_for_each(|s| dims(s))?;
                dims(target)
            }
            _ => Err(Error::InvalidConfig(format!(
                "side input does not match the {:?} variant",
                self.config.variant
            ))),
        }
    }

    /// Per-step next-command distributions for `commands`.
    pub fn forward(&self, commands: &[CommandId], side: Side<'_>) -> Result<Forward> {
        if commands.is_empty() {
            return Err(Error::NoContext { needed: 1, got: 0 });
        }
        self.check_commands(commands)?;
        let side = match side {
            Side::None => ExampleSide::None,
            Side::Constant(d) => ExampleSide::Constant(d.probs().to_vec()),
            Side::PerStep(ds) => ExampleSide::Jtc {
                prefix: ds.iter().map(|d| d.probs().to_vec()).collect(),
                target: vec![0.0; ds.first().map_or(0, |d| d.len())],
            },
        };
        self.check_side(&side, commands.len())?;
        let trace = self.run(&self.params, commands, &side);
        Ok(Forward {
            probs: trace.logits.iter().map(|l| softmax(l)).collect(),
            task_hat: trace.task.map(|(_, hats)| {
                hats.into_iter()
                    .map(TaskDistribution::from_weights)
                    .collect()
            }),
        })
    }

    /// Loss of one example (mean cross-entropy over its steps, plus the
    /// weighted mean KL term for jtc). When `grad` is given, adds
    /// `scale * d loss / d params` into it.
    fn example_loss(
        &self,
        p: &[f64],
        ex: &TrainExample,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<(f64, f64)> {
        let n = ex.commands.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::NoContext {
                needed: 2,
                got: ex.commands.len(),
            });
        }
        self.check_commands(&ex.commands)?;
        self.check_side(&ex.side, n)?;
        let inputs = &ex.commands[..n];
        let trace = self.run(p, inputs, &ex.side);
        let ce: f64 = (0..n)
            .map(|t| cross_entropy(&trace.logits[t], ex.commands[t + 1].index()))
            .sum::<f64>()
            / n as f64;
        let kl = match (&ex.side, &trace.task) {
            (ExampleSide::Jtc { target, .. }, Some((_, hats))) => {
                hats.iter().map(|h| kl_raw(target, h)).sum::<f64>() / n as f64
            }
            _ => 0.0,
        };
        if !(ce.is_finite() && kl.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        if let Some((g, scale)) = grad {
            self.backward(p, g, scale, inputs, &ex.commands[1..], &ex.side, &trace);
        }
        Ok((ce, kl))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        scale: f64,
        inputs: &[CommandId],
        targets: &[CommandId],
        side: &ExampleSide,
        trace: &Trace,
    ) {
        let n = inputs.len();
        let v = self.vocab_size;
        let e = self.config.embed_dim;
        let lay = &self.layout;
        let hsz = lay.cmd.hidden();
        let w = scale / n as f64;

        let mut dh_top = Vec::with_capacity(n);
        for t in 0..n {
            let mut dl = softmax(&trace.logits[t]);
            dl[targets[t].index()] -= 1.0;
            dl.iter_mut().for_each(|x| *x *= w);
            for (gb, d) in g[lay.out_b..lay.out_b + v].iter_mut().zip(&dl) {
                *gb += d;
            }
            outer_add(
                &mut g[lay.out_w..lay.out_w + v * hsz],
                &dl,
                trace.cmd.top(t),
            );
            let mut dh = vec![0.0; hsz];
            matvec_t_add(&p[lay.out_w..lay.out_w + v * hsz], &dl, &mut dh);
            dh_top.push(dh);
        }
        let dx = lay.cmd.backward(p, g, &trace.cmd, dh_top);
        for t in 0..n {
            let o = lay.embedding + inputs[t].index() * e;
            for (ge, d) in g[o..o + e].iter_mut().zip(&dx[t][..e]) {
                *ge += d;
            }
        }

        if let (Some(tm), Some((task_trace, hats)), ExampleSide::Jtc { target, .. }) =
            (&lay.task, &trace.task, side)
        {
            let k = self.config.k;
            let th = tm.stack.hidden();
            let kw = self.config.kl_weight * w;
            let mut dh_task = Vec::with_capacity(n);
            for t in 0..n {
                let hat = &hats[t];
                // Gradient w.r.t. the predicted distribution from the command net.
                let dhat = &dx[t][e..];
                let dot: f64 = hat.iter().zip(dhat).map(|(a, b)| a * b).sum();
                let du: Vec<f64> = (0..k)
                    .map(|z| hat[z] * (dhat[z] - dot) + kw * (hat[z] - target[z]))
                    .collect();
                for (gb, d) in g[tm.head_b..tm.head_b + k].iter_mut().zip(&du) {
                    *gb += d;
                }
                outer_add(
                    &mut g[tm.head_w..tm.head_w + k * th],
                    &du,
                    task_trace.top(t),
                );
                let mut dh = vec![0.0; th];
                matvec_t_add(&p[tm.head_w..tm.head_w + k * th], &du, &mut dh);
                dh_task.push(dh);
            }
            let dxt = tm.stack.backward(p, g, task_trace, dh_task);
            for t in 0..n {
                let o = lay.embedding + inputs[t].index() * e;
                for (ge, d) in g[o..o + e].iter_mut().zip(&dxt[t][..e]) {
                    *ge += d;
                }
            }
        }
    }

    fn batch_loss_at(
        &self,
        p: &[f64],
        batch: &[TrainExample],
        mut grad: Option<&mut [f64]>,
    ) -> Result<(f64, f64, f64)> {
        if batch.is_empty() {
            return Err(Error::EmptyCorpus("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let (mut ce, mut kl) = (0.0, 0.0);
        for ex in batch {
            let (c, k) = self.example_loss(p, ex, grad.as_deref_mut().map(|g| (g, scale)))?;
            ce += c;
            kl += k;
        }
        let (ce, kl) = (ce * scale, kl * scale);
        Ok((ce + self.config.kl_weight * kl, ce, kl))
    }

    /// Mean training loss of a batch.
    pub fn loss(&self, batch: &[TrainExample]) -> Result<f64> {
        Ok(self.batch_loss_at(&self.params, batch, None)?.0)
    }

    pub fn loss_with(&self, params: &[f64], batch: &[TrainExample]) -> Result<f64> {
        Ok(self.batch_loss_at(params, batch, None)?.0)
    }

    /// Mean training loss of a batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[TrainExample]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; self.params.len()];
        let (loss, _, _) = self.batch_loss_at(&self.params, batch, Some(&mut g))?;
        Ok((loss, g))
    }
}

/// `sum_z p[z] log(p[z] / max(q[z], KL_FLOOR))` with `0 log 0 = 0`.
fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pz, _)| pz > 0.0)
        .map(|(&pz, &qz)| pz * (pz / qz.max(KL_FLOOR)).ln())
        .sum()
}

pub fn kl_divergence(p: &TaskDistribution, q: &TaskDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(kl_raw(p.probs(), q.probs()).max(0.0))
}

/// A trained net together with the topic model its side inputs come from.
/// Evaluation only ever sees the prefix handed to [`NextCommandModel::predict`].
pub struct NetPredictor<'a> {
    pub net: &'a RecommenderNet,
    pub btm: Option<&'a BitermModel>,
}

impl<'a> NetPredictor<'a> {
    pub fn new(net: &'a RecommenderNet, btm: Option<&'a BitermModel>) -> Result<Self> {
        if net.variant() != Variant::Vanilla {
            let btm = btm
                .ok_or_else(|| Error::InvalidConfig("task-aware nets need a topic model".into()))?;
            if btm.k() != net.config.k {
                return Err(Error::DimensionMismatch {
                    expected: net.config.k,
                    got: btm.k(),
                });
            }
            if btm.vocab_hash != net.vocab_hash {
                return Err(Error::VocabMismatch {
                    expected: net.vocab_hash.clone(),
                    found: btm.vocab_hash.clone(),
                });
            }
        }
        Ok(NetPredictor { net, btm })
    }

    fn btm(&self) -> &BitermModel {
        self.btm.expect("checked in new")
    }

    fn steps(&self, seq: &[CommandId]) -> Result<Vec<Vec<f64>>> {
        let f = match self.net.variant() {
            Variant::Vanilla => self.net.forward(seq, Side::None)?,
            Variant::Jtc => {
                let prefix = self.btm().prefix_distributions(seq)?;
                self.net.forward(seq, Side::PerStep(&prefix))?
            }
            Variant::Task => {
                let d = self.btm().infer(seq)?;
                self.net.forward(seq, Side::Constant(&d))?
            }
        };
        Ok(f.probs)
    }
}

impl NextCommandModel for NetPredictor<'_> {
    fn vocab_size(&self) -> usize {
        self.net.vocab_size
    }

    fn predict(&self, prefix: &[CommandId]) -> Result<Vec<f64>> {
        Ok(self.steps(prefix)?.pop().expect("non-empty prefix"))
    }

    fn predict_steps(&self, seq: &[CommandId]) -> Option<Result<Vec<Vec<f64>>>> {
        // The task variant's side input depends on the whole prefix, so each
        // evaluation point needs its own pass.
        (self.net.variant() != Variant::Task).then(|| self.steps(seq))
    }
}

pub fn recommend(
    net: &RecommenderNet,
    prefix: &[CommandId],
    btm: Option<&BitermModel>,
    top_k: usize,
) -> Result<Vec<(CommandId, f64)>> {
    NetPredictor::new(net, btm)?.recommend(prefix, top_k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub loss_ce: f64,
    pub loss_kl: f64,
    pub val_top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_top1: f64,
}

/// Teacher-forced training with Adam, global-norm clipping and early
/// stopping on validation Top-1. The returned net holds the parameters of
/// the best validation epoch.
pub fn train(
    cfg: &NetConfig,
    vocab: &Vocabulary,
    train_set: &[CommandSequence],
    val_set: &[CommandSequence],
    btm: Option<&BitermModel>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(RecommenderNet, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus("no training sequences".into()));
    }
    if cfg.variant != Variant::Vanilla {
        let b = btm.ok_or_else(|| {
            Error::InvalidConfig("task-aware variants need a fitted topic model".into())
        })?;
        if b.k() != cfg.k {
            return Err(Error::DimensionMismatch {
                expected: cfg.k,
                got: b.k(),
            });
        }
        if b.vocab_hash != vocab.fingerprint() {
            return Err(Error::VocabMismatch {
                expected: b.vocab_hash.clone(),
                found: vocab.fingerprint(),
            });
        }
    }
    let mut net = RecommenderNet::new(cfg.clone(), vocab.len(), vocab.fingerprint())?;
    let examples = train_set
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| TrainExample::new(&s.commands, cfg.variant, btm))
        .collect::<Result<Vec<_>>>()?;
    let initial_loss = net.loss(&examples)?;

    let mut opt = Adam::new(net.params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = rng::substream(cfg.seed, 1);
    let mut best = (f64::NEG_INFINITY, 0usize, net.params.clone());
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut grad = vec![0.0; net.params.len()];
    let mut stopped_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut sum_ce, mut sum_kl, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (loss, ce, kl) = net.batch_loss_at(&net.params, &batch, Some(&mut grad))?;
            clip_global_norm(&mut grad, cfg.grad_clip);
            opt.step(&mut net.params, &grad);
            sum += loss;
            sum_ce += ce;
            sum_kl += kl;
            batches += 1;
        }
        let val_top1 = if val_set.is_empty() {
            0.0
        } else {
            topk_accuracies(&NetPredictor::new(&net, btm)?, val_set, &[1])?[0]
        };
        let m = EpochMetrics {
            epoch,
            loss: sum / batches as f64,
            loss_ce: sum_ce / batches as f64,
            loss_kl: sum_kl / batches as f64,
            val_top1,
        };
        on_epoch(&m);
        epochs.push(m);
        stopped_epoch = epoch;
        if val_top1 > best.0 || val_set.is_empty() {
            best = (val_top1, epoch, net.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_val_top1, best_epoch, params) = best;
    net.params = params;
    Ok((
        net,
        TrainReport {
            initial_loss,
            epochs,
            best_epoch,
            stopped_epoch,
            best_val_top1,
        },
    ))
}
