//! Hyperparameters and flags shared by the subcommands.
//!
//! Every knob can come from a command-line flag or from the flat JSON config
//! file given with `--config`; flags win over the file, and the file wins
//! over the built-in defaults.

use std::path::Path;

use clap::Args;
use serde::Deserialize;

use taskrec_core::experiment::{HelpSettings, RecommenderSettings};
use taskrec_core::help::{
    ForestConfig, HelpLstmConfig, TimeInput, DEFAULT_MIN_CONTEXT, DEFAULT_PROJECTION_DIM,
    DEFAULT_THRESHOLD,
};
use taskrec_core::markov::{DEFAULT_MAX_DEPTH, DEFAULT_MIN_COUNT};
use taskrec_core::nn::NetConfig;
use taskrec_core::topics::BtmConfig;

use crate::error::{CliError, CliResult, WithPath};

const DEFAULT_RUNS: usize = 5;
const DEFAULT_TOP_K: usize = 5;
const DEFAULT_NEGATIVE_RATIO: usize = 5;
const DEFAULT_TEST_FRACTION: f64 = 0.2;
const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    /// Base random seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Number of topics (tasks) of the biterm model
    #[arg(long)]
    pub topics: Option<usize>,
    /// Dirichlet prior on topic proportions
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dirichlet prior on topic-command distributions
    #[arg(long)]
    pub beta: Option<f64>,
    /// Gibbs sweeps
    #[arg(long)]
    pub iterations: Option<usize>,

    /// Maximum suffix-tree context length
    #[arg(long)]
    pub depth: Option<usize>,
    /// Minimum occurrences for a suffix-tree context to be kept
    #[arg(long)]
    pub min_count: Option<u64>,

    /// Command embedding size of the recommender nets
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Hidden size of the recommender nets
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Recurrent layers of the recommender nets
    #[arg(long)]
    pub layers: Option<usize>,
    /// Adam learning rate (nets and help classifier)
    #[arg(long)]
    pub lr: Option<f64>,
    /// Maximum training epochs (nets and help classifier)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight of the task-prediction KL term (jtcrnn)
    #[arg(long)]
    pub kl_weight: Option<f64>,
    /// Global gradient-norm clip
    #[arg(long)]
    pub grad_clip: Option<f64>,

    /// Minimum context before help predictions start
    #[arg(long)]
    pub min_context: Option<usize>,
    /// Help alarm threshold
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Trees in the help forest
    #[arg(long)]
    pub trees: Option<usize>,
    /// Random projection size of the forest features
    #[arg(long)]
    pub proj_dim: Option<usize>,
    /// Command embedding size of the help classifier
    #[arg(long)]
    pub help_embed_dim: Option<usize>,
    /// Hidden size of the help classifier
    #[arg(long)]
    pub help_hidden_dim: Option<usize>,
    /// Recurrent layers of the help classifier
    #[arg(long)]
    pub help_layers: Option<usize>,
    /// Ignore time gaps in the help models
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_time: Option<bool>,
    /// Feed ln(1 + gap) instead of raw seconds
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub log1p: Option<bool>,

    /// Cap on identical consecutive commands
    #[arg(long)]
    pub max_repeat: Option<usize>,
    /// Sequence length after preprocessing
    #[arg(long)]
    pub length: Option<usize>,
    /// Negatives sampled per help positive
    #[arg(long)]
    pub negative_ratio: Option<usize>,
    /// Fraction of users held out for testing
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Fraction of the remaining users used for validation
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Keep negatives at full length instead of matching positive lengths
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_length_match: Option<bool>,

    /// Seeded runs per evaluation
    #[arg(long)]
    pub runs: Option<usize>,
    /// Recommendations per query
    #[arg(long)]
    pub top_k: Option<usize>,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident; $($f:ident),*) => {
        Knobs { $($f: $a.$f.or($b.$f)),* }
    };
}

impl Knobs {
    /// `self` with unset fields filled from `fallback`.
    pub fn or(self, fallback: Knobs) -> Knobs {
        let (a, b) = (self, fallback);
        merge_fields!(a, b; seed, topics, alpha, beta, iterations, depth, min_count, embed_dim, hidden_dim, layers,
            lr, epochs, patience, batch_size, kl_weight, grad_clip, min_context, threshold, trees, proj_dim,
            help_embed_dim, help_hidden_dim, help_layers, no_time, log1p, max_repeat, length, negative_ratio,
            test_fraction, val_fraction, no_length_match, runs, top_k)
    }

    pub fn load(path: &Path) -> CliResult<Knobs> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    /// Flags merged over the optional config file.
    pub fn resolve(self, config: Option<&Path>) -> CliResult<Knobs> {
        match config {
            Some(p) => Ok(self.or(Knobs::load(p)?)),
            None => Ok(self),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn runs(&self) -> usize {
        self.runs.unwrap_or(DEFAULT_RUNS)
    }

    pub fn top_k(&self) -> usize {
        self.top_k.unwrap_or(DEFAULT_TOP_K)
    }

    pub fn min_context(&self) -> usize {
        self.min_context.unwrap_or(DEFAULT_MIN_CONTEXT)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(DEFAULT_THRESHOLD)
    }

    pub fn max_repeat(&self) -> usize {
        self.max_repeat
            .unwrap_or(taskrec_core::corpus::DEFAULT_MAX_REPEAT)
    }

    pub fn length(&self) -> usize {
        self.length
            .unwrap_or(taskrec_core::corpus::DEFAULT_TARGET_LEN)
    }

    pub fn negative_ratio(&self) -> usize {
        self.negative_ratio.unwrap_or(DEFAULT_NEGATIVE_RATIO)
    }

    pub fn test_fraction(&self) -> f64 {
        self.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION)
    }

    pub fn val_fraction(&self) -> f64 {
        self.val_fraction.unwrap_or(DEFAULT_VAL_FRACTION)
    }

    pub fn length_match(&self) -> bool {
        !self.no_length_match.unwrap_or(false)
    }

    pub fn time_input(&self) -> TimeInput {
        TimeInput::from_flags(!self.no_time.unwrap_or(false), self.log1p.unwrap_or(false))
    }

    pub fn btm(&self) -> BtmConfig {
        let d = BtmConfig::default();
        BtmConfig {
            k: self.topics.unwrap_or(d.k),
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            iterations: self.iterations.unwrap_or(d.iterations),
            seed: self.seed(),
        }
    }

    pub fn net(&self) -> NetConfig {
        let d = NetConfig::default();
        NetConfig {
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            hidden_dim: self.hidden_dim.unwrap_or(d.hidden_dim),
            layers: self.layers.unwrap_or(d.layers),
            k: self.topics.unwrap_or(d.k),
            lr: self.lr.unwrap_or(d.lr),
            max_epochs: self.epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: self.seed(),
            grad_clip: self.grad_clip.unwrap_or(d.grad_clip),
            kl_weight: self.kl_weight.unwrap_or(d.kl_weight),
            ..d
        }
    }

    pub fn recommender(&self) -> RecommenderSettings {
        RecommenderSettings {
            btm: self.btm(),
            pst_depth: self.depth.unwrap_or(DEFAULT_MAX_DEPTH),
            pst_min_count: self.min_count.unwrap_or(DEFAULT_MIN_COUNT),
            net: self.net(),
        }
    }

    pub fn help(&self) -> HelpSettings {
        let l = HelpLstmConfig::default();
        HelpSettings {
            projection_dim: self.proj_dim.unwrap_or(DEFAULT_PROJECTION_DIM),
            forest: ForestConfig {
                n_trees: self.trees.unwrap_or(ForestConfig::default().n_trees),
                seed: self.seed(),
                ..ForestConfig::default()
            },
            lstm: HelpLstmConfig {
                embed_dim: self.help_embed_dim.unwrap_or(l.embed_dim),
                hidden_dim: self.help_hidden_dim.unwrap_or(l.hidden_dim),
                layers: self.help_layers.unwrap_or(l.layers),
                time: self.time_input(),
                lr: self.lr.unwrap_or(l.lr),
                max_epochs: self.epochs.unwrap_or(l.max_epochs),
                patience: self.patience.unwrap_or(l.patience),
                batch_size: self.batch_size.unwrap_or(l.batch_size),
                seed: self.seed(),
                grad_clip: self.grad_clip.unwrap_or(l.grad_clip),
                k: self.min_context(),
            },
            threshold: self.threshold(),
        }
    }
}
