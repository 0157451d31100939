//! Recurrent help classifier over `embedding ⊕ Δt` inputs.
//!
//! Training reads whole sequences and applies binary cross-entropy to the
//! final step's two logits only. Online inference feeds one command at a
//! time through the same step routine and applies the output head at every
//! step from `k` on.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::TimeInput;
use crate::corpus::{CommandId, CommandSequence, HelpExample, HelpLabel};
use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::nn::adam::{clip_global_norm, Adam};
use crate::nn::lstm::{LstmStack, StackState, StackTrace};
use crate::nn::params::{
    matvec_add, matvec_t_add, outer_add, softmax, ParamLayout, Tensor, TensorKind,
};
use crate::rng;

pub const DEFAULT_MIN_CONTEXT: usize = 8;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const HELP: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpLstmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub time: TimeInput,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: f64,
    /// Minimum context before online predictions start.
    pub k: usize,
}

impl Default for HelpLstmConfig {
    fn default() -> Self {
        HelpLstmConfig {
            embed_dim: 8,
            hidden_dim: 32,
            layers: 1,
            time: TimeInput::Seconds,
            lr: 1e-3,
            max_epochs: 30,
            patience: 5,
            batch_size: 32,
            seed: 0,
            grad_clip: 5.0,
            k: DEFAULT_MIN_CONTEXT,
        }
    }
}

impl HelpLstmConfig {
    pub fn input_width(&self) -> usize {
        self.embed_dim + self.time.width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1
            || self.hidden_dim < 1
            || self.layers < 1
            || self.batch_size < 1
            || !(self.lr > 0.0)
        {
            return Err(Error::InvalidConfig(
                "help classifier dimensions and rates must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    params: ParamLayout,
    embedding: usize,
    stack: LstmStack,
    head_w: usize,
    head_b: usize,
}

impl Layout {
    fn new(cfg: &HelpLstmConfig, vocab_size: usize) -> Self {
        let mut params = ParamLayout::default();
        let embedding = params.alloc("embedding", vocab_size, cfg.embed_dim, TensorKind::Weight);
        let stack = LstmStack::alloc(
            &mut params,
            "help",
            cfg.input_width(),
            cfg.hidden_dim,
            cfg.layers,
        );
        let head_w = params.alloc("head.w", 2, cfg.hidden_dim, TensorKind::Weight);
        let head_b = params.alloc("head.b", 2, 1, TensorKind::Bias);
        Layout {
            params,
            embedding,
            stack,
            head_w,
            head_b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HelpLstmFile", into = "HelpLstmFile")]
pub struct HelpLstm {
    pub config: HelpLstmConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub params: Vec<f64>,
    layout: Layout,
}

pub const HELP_LSTM_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HelpLstmFile {
    format_version: u32,
    config: HelpLstmConfig,
    vocab_size: usize,
    vocab_hash: String,
    params: Vec<f64>,
}

impl From<HelpLstm> for HelpLstmFile {
    fn from(m: HelpLstm) -> Self {
        HelpLstmFile {
            format_version: HELP_LSTM_FORMAT_VERSION,
            config: m.config,
            vocab_size: m.vocab_size,
            vocab_hash: m.vocab_hash,
            params: m.params,
        }
    }
}

impl TryFrom<HelpLstmFile> for HelpLstm {
    type Error = Error;

    fn try_from(f: HelpLstmFile) -> Result<Self> {
        if f.format_version != HELP_LSTM_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "help classifier format version {}",
                f.format_version
            )));
        }
        HelpLstm::from_params(f.config, f.vocab_size, f.vocab_hash, f.params)
    }
}

/// A labelled sequence in the classifier's input form.
#[derive(Clone, Debug, PartialEq)]
pub struct HelpInput {
    pub commands: Vec<CommandId>,
    pub gaps: Vec<f64>,
    pub help: bool,
}

impl HelpInput {
    pub fn new(seq: &CommandSequence, help: bool) -> Self {
        HelpInput {
            commands: seq.commands.clone(),
            gaps: (0..seq.len()).map(|j| seq.gap(j)).collect(),
            help,
        }
    }

    pub fn from_example(e: &HelpExample) -> Self {
        HelpInput::new(&e.sequence, e.label == HelpLabel::Help)
    }
}

impl HelpLstm {
    pub fn new(config: HelpLstmConfig, vocab_size: usize, vocab_hash: String) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab_size);
        let params = layout.params.init(config.seed);
        Ok(HelpLstm {
            config,
            vocab_size,
            vocab_hash,
            params,
            layout,
        })
    }

    pub fn from_params(
        config: HelpLstmConfig,
        vocab_size: usize,
        vocab_hash: String,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab_size);
        if params.len() != layout.params.total {
            return Err(Error::DimensionMismatch {
                expected: layout.params.total,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(HelpLstm {
            config,
            vocab_size,
            vocab_hash,
            params,
            layout,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.layout.params.tensors
    }

    fn input(&self, p: &[f64], c: CommandId, gap: f64) -> Result<Vec<f64>> {
        if c.index() >= self.vocab_size {
            return Err(Error::CommandOutOfRange {
                id: c.index(),
                size: self.vocab_size,
            });
        }
        let e = self.config.embed_dim;
        let o = self.layout.embedding + c.index() * e;
        let mut x = p[o..o + e].to_vec();
        if self.config.time.enabled() {
            x.push(self.config.time.transform(gap));
        }
        Ok(x)
    }

    fn logits(&self, p: &[f64], h: &[f64]) -> Vec<f64> {
        let hsz = self.config.hidden_dim;
        let mut u = p[self.layout.head_b..self.layout.head_b + 2].to_vec();
        matvec_add(
            &p[self.layout.head_w..self.layout.head_w + 2 * hsz],
            h,
            &mut u,
        );
        u
    }

    fn trace(&self, p: &[f64], ex: &HelpInput) -> Result<StackTrace> {
        if ex.commands.is_empty() {
            return Err(Error::NoContext { needed: 1, got: 0 });
        }
        if ex.gaps.len() != ex.commands.len() {
            return Err(Error::DimensionMismatch {
                expected: ex.commands.len(),
                got: ex.gaps.len(),
            });
        }
        let inputs = ex
            .commands
            .iter()
            .zip(&ex.gaps)
            .map(|(&c, &g)| self.input(p, c, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.layout.stack.forward(p, inputs))
    }

    /// Training-mode probability of help: the head applied to the final step.
    pub fn final_probability(&self, ex: &HelpInput) -> Result<f64> {
        let t = self.trace(&self.params, ex)?;
        Ok(softmax(&self.logits(&self.params, t.top(t.len() - 1)))[HELP])
    }

    /// Per-step probabilities of help for every step of the sequence.
    pub fn step_probabilities(&self, ex: &HelpInput) -> Result<Vec<f64>> {
        let t = self.trace(&self.params, ex)?;
        Ok((0..t.len())
            .map(|i| softmax(&self.logits(&self.params, t.top(i)))[HELP])
            .collect())
    }

    /// Sequence-level score: the largest per-step probability from step `k`
    /// on, or the final step's when the sequence is not longer than `k`.
    pub fn sequence_score(&self, ex: &HelpInput) -> Result<f64> {
        let probs = self.step_probabilities(ex)?;
        let from = self.config.k.min(probs.len() - 1);
        Ok(probs[from..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn example_loss(
        &self,
        p: &[f64],
        ex: &HelpInput,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64> {
        let trace = self.trace(p, ex)?;
        let last = trace.len() - 1;
        let logits = self.logits(p, trace.top(last));
        let target = usize::from(ex.help);
        let loss = crate::nn::params::cross_entropy(&logits, target);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        if let Some((g, scale)) = grad {
            let hsz = self.config.hidden_dim;
            let mut du = softmax(&logits);
            du[target] -= 1.0;
            du.iter_mut().for_each(|x| *x *= scale);
            let (hw, hb) = (self.layout.head_w, self.layout.head_b);
            g[hb] += du[0];
            g[hb + 1] += du[1];
            outer_add(&mut g[hw..hw + 2 * hsz], &du, trace.top(last));
            let mut dh_top = vec![vec![0.0; hsz]; trace.len()];
            matvec_t_add(&p[hw..hw + 2 * hsz], &du, &mut dh_top[last]);
            let dx = self.layout.stack.backward(p, g, &trace, dh_top);
            let e = self.config.embed_dim;
            for (c, d) in ex.commands.iter().zip(&dx) {
                let o = self.layout.embedding + c.index() * e;
                for (ge, v) in g[o..o + e].iter_mut().zip(&d[..e]) {
                    *ge += v;
                }
            }
        }
        Ok(loss)
    }

    fn batch_loss_at(
        &self,
        p: &[f64],
        batch: &[HelpInput],
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyCorpus("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut sum = 0.0;
        for ex in batch {
            sum += self.example_loss(p, ex, grad.as_deref_mut().map(|g| (g, scale)))?;
        }
        Ok(sum * scale)
    }

    pub fn loss_with(&self, params: &[f64], batch: &[HelpInput]) -> Result<f64> {
        self.batch_loss_at(params, batch, None)
    }

    pub fn loss_and_grad(&self, batch: &[HelpInput]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; self.params.len()];
        let loss = self.batch_loss_at(&self.params, batch, Some(&mut g))?;
        Ok((loss, g))
    }

    pub fn stream(&self, threshold: f64) -> HelpStream<'_> {
        HelpStream {
            model: self,
            state: self.layout.stack.start(),
            t: 0,
            threshold,
            probs: Vec::new(),
            first_alarm: None,
        }
    }
}

/// Per-stream online state. One per user session.
pub struct HelpStream<'a> {
    model: &'a HelpLstm,
    state: StackState,
    t: usize,
    threshold: f64,
    probs: Vec<f64>,
    first_alarm: Option<usize>,
}

impl HelpStream<'_> {
    /// Feeds one command and its gap; returns `P(help)` once at least `k`
    /// earlier commands have been seen.
    pub fn push(&mut self, command: CommandId, gap: f64) -> Result<Option<f64>> {
        let m = self.model;
        let x = m.input(&m.params, command, gap)?;
        let h = m.layout.stack.step(&m.params, &mut self.state, &x);
        let p = softmax(&m.logits(&m.params, h))[HELP];
        let t = self.t;
        self.t += 1;
        if t < m.config.k {
            return Ok(None);
        }
        self.probs.push(p);
        if self.first_alarm.is_none() && p >= self.threshold {
            self.first_alarm = Some(t);
        }
        Ok(Some(p))
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn alarm(&self) -> bool {
        self.first_alarm.is_some()
    }

    pub fn prediction(&self) -> HelpPrediction {
        HelpPrediction {
            first_step: self.model.config.k,
            probs: self.probs.clone(),
            alarm: self.first_alarm.is_some(),
            first_alarm_index: self.first_alarm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpPrediction {
    /// Step index of `probs[0]`.
    pub first_step: usize,
    pub probs: Vec<f64>,
    pub alarm: bool,
    pub first_alarm_index: Option<usize>,
}

/// Runs a whole stream through a fresh online state. The model's minimum
/// context is replaced by `k`.
pub fn predict_help_online(
    model: &HelpLstm,
    stream: &[(CommandId, f64)],
    k: usize,
    threshold: f64,
) -> Result<HelpPrediction> {
    if stream.len() < k {
        return Err(Error::NoContext {
            needed: k,
            got: stream.len(),
        });
    }
    let mut m = model.clone();
    m.config.k = k;
    let mut s = m.stream(threshold);
    for &(c, g) in stream {
        s.push(c, g)?;
    }
    Ok(s.prediction())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val_auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpTrainReport {
    pub initial_loss: f64,
    pub epochs: Vec<HelpEpoch>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// Batches of a shuffled epoch, each holding at least one positive.
pub fn stratified_batches(
    labels: &[bool],
    batch_size: usize,
    rng: &mut rng::Rng,
) -> Vec<Vec<usize>> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_batches = labels
        .len()
        .div_ceil(batch_size.max(1))
        .min(pos.len())
        .max(1);
    let mut batches = vec![Vec::new(); n_batches];
    for (j, i) in pos.into_iter().chain(neg).enumerate() {
        batches[j % n_batches].push(i);
    }
    batches
}

/// Scores `val` with [`HelpLstm::sequence_score`] and returns the AU-ROC,
/// or `None` when `val` lacks one of the classes.
pub fn validation_auroc(model: &HelpLstm, val: &[HelpInput]) -> Result<Option<f64>> {
    let labels: Vec<bool> = val.iter().map(|e| e.help).collect();
    if !labels.contains(&true) || !labels.contains(&false) {
        return Ok(None);
    }
    let scores = val
        .iter()
        .map(|e| model.sequence_score(e))
        .collect::<Result<Vec<_>>>()?;
    auroc(&scores, &labels).map(Some)
}

/// Adam training with stratified batches and early stopping on validation
/// AU-ROC; the returned model holds the best epoch's parameters.
pub fn train_help_lstm(
    train: &[HelpInput],
    val: &[HelpInput],
    vocab_size: usize,
    vocab_hash: String,
    cfg: &HelpLstmConfig,
    mut on_epoch: impl FnMut(&HelpEpoch),
) -> Result<(HelpLstm, HelpTrainReport)> {
    let labels: Vec<bool> = train.iter().map(|e| e.help).collect();
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(Error::SingleClass);
    }
    if let Some(short) = train.iter().find(|e| e.help && e.commands.len() <= cfg.k) {
        return Err(Error::NoContext {
            needed: cfg.k + 1,
            got: short.commands.len(),
        });
    }
    let mut model = HelpLstm::new(cfg.clone(), vocab_size, vocab_hash)?;
    let initial_loss = model.loss_with(&model.params, train)?;
    let mut opt = Adam::new(model.params.len(), cfg.lr);
    let mut r = rng::substream(cfg.seed, 1);
    let mut grad = vec![0.0; model.params.len()];
    let mut best: (f64, usize, Vec<f64>) = (f64::NEG_INFINITY, 0, model.params.clone());
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_epoch = 0;
    for epoch in 1..=cfg.max_epochs {
        let (mut sum, mut count) = (0.0, 0);
        for batch in stratified_batches(&labels, cfg.batch_size, &mut r) {
            let items: Vec<HelpInput> = batch.iter().map(|&i| train[i].clone()).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            sum += model.batch_loss_at(&model.params, &items, Some(&mut grad))?;
            count += 1;
            clip_global_norm(&mut grad, cfg.grad_clip);
            opt.step(&mut model.params, &grad);
        }
        let val_auroc = validation_auroc(&model, val)?;
        let e = HelpEpoch {
            epoch,
            loss: sum / count as f64,
            val_auroc,
        };
        on_epoch(&e);
        epochs.push(e);
        stopped_epoch = epoch;
        match val_auroc {
            Some(a) if a <= best.0 => {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
            v => {
                best = (v.unwrap_or(f64::NEG_INFINITY), epoch, model.params.clone());
                since_best = 0;
            }
        }
    }
    model.params = best.2;
    Ok((
        model,
        HelpTrainReport {
            initial_loss,
            epochs,
            best_epoch: best.1,
            stopped_epoch,
        },
    ))
}
