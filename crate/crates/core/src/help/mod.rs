//! Proactive help detection: a random-forest baseline over pooled projected
//! command features and a streaming recurrent classifier.

pub mod classifier;
pub mod features;
pub mod forest;

pub use classifier::{
    predict_help_online, train_help_lstm, HelpInput, HelpLstm, HelpLstmConfig, HelpPrediction,
    HelpStream, DEFAULT_MIN_CONTEXT, DEFAULT_THRESHOLD,
};
pub use features::{
    featurize_rf, make_projection, FeatureRecipe, ProjectionMatrix, TimeInput,
    DEFAULT_PROJECTION_DIM,
};
pub use forest::{fit_forest, Forest, ForestConfig};

use serde::{Deserialize, Serialize};

use crate::corpus::CommandSequence;
use crate::error::Result;

/// The forest baseline together with its feature recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpForest {
    pub recipe: FeatureRecipe,
    pub forest: Forest,
    pub vocab_hash: String,
}

impl HelpForest {
    pub fn fit(
        train: &[CommandSequence],
        labels: &[bool],
        recipe: FeatureRecipe,
        cfg: &ForestConfig,
        vocab_hash: String,
    ) -> Result<Self> {
        let x = train
            .iter()
            .map(|s| recipe.featurize(s))
            .collect::<Result<Vec<_>>>()?;
        let forest = fit_forest(&x, labels, cfg)?;
        Ok(HelpForest {
            recipe,
            forest,
            vocab_hash,
        })
    }

    pub fn score(&self, seq: &CommandSequence) -> Result<f64> {
        self.forest.predict_proba(&self.recipe.featurize(seq)?)
    }
}
