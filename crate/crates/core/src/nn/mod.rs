//! Recurrent recommenders built from scratch: parameter storage, a stacked
//! LSTM with backpropagation through time, Adam, and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod recommender;

pub use gradcheck::{gradient_check, GradCheck};
pub use recommender::{
    kl_divergence, recommend, train, NetConfig, NetPredictor, RecommenderNet, Side, TrainExample,
    TrainReport, Variant,
};
