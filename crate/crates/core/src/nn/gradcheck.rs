//! Central finite-difference verification of analytic gradients.

use rand::Rng as _;

use super::params::Tensor;
use super::recommender::{RecommenderNet, TrainExample};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_SAMPLES: usize = 240;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Largest relative error seen in each tensor, in layout order.
    pub per_tensor: Vec<(String, f64)>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Coordinates to probe: `samples` draws spread as evenly as possible over
/// the tensors, each tensor getting at least one and at most its size, drawn
/// uniformly within it.
pub fn sample_coordinates(tensors: &[Tensor], samples: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::seeded(seed);
    let live: Vec<&Tensor> = tensors.iter().filter(|t| !t.is_empty()).collect();
    let mut quota = vec![0usize; live.len()];
    let mut left = samples.max(live.len());
    loop {
        let open: Vec<usize> = (0..live.len())
            .filter(|&i| quota[i] < live[i].len())
            .collect();
        if open.is_empty() || left == 0 {
            break;
        }
        let share = (left / open.len()).max(1);
        for i in open {
            let add = share.min(live[i].len() - quota[i]).min(left);
            quota[i] += add;
            left -= add;
        }
    }
    let mut out = Vec::new();
    for (t, &q) in live.iter().zip(&quota) {
        for _ in 0..q {
            out.push(t.offset + r.gen_range(0..t.len()));
        }
    }
    out
}

/// Compares `analytic` with `(f(θ+ε) − f(θ−ε)) / 2ε` at sampled coordinates.
pub fn check_gradient(
    tensors: &[Tensor],
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    samples: usize,
    seed: u64,
    loss: impl Fn(&[f64]) -> Result<f64>,
) -> Result<GradCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut theta = params.to_vec();
    let mut per_tensor: Vec<(String, f64)> =
        tensors.iter().map(|t| (t.name.clone(), 0.0)).collect();
    let coords = sample_coordinates(tensors, samples, seed);
    let mut max_rel_error: f64 = 0.0;
    for &i in &coords {
        let orig = theta[i];
        theta[i] = orig + epsilon;
        let up = loss(&theta)?;
        theta[i] = orig - epsilon;
        let down = loss(&theta)?;
        theta[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        let err = relative_error(analytic[i], (up - down) / (2.0 * epsilon));
        max_rel_error = max_rel_error.max(err);
        let slot = tensors
            .iter()
            .position(|t| t.range().contains(&i))
            .expect("coordinate inside a tensor");
        per_tensor[slot].1 = per_tensor[slot].1.max(err);
    }
    Ok(GradCheck {
        max_rel_error,
        coordinates: coords.len(),
        per_tensor,
    })
}

/// Gradient check of a recommender's training loss on `batch`.
pub fn gradient_check(
    net: &RecommenderNet,
    batch: &[TrainExample],
    epsilon: f64,
    seed: u64,
) -> Result<GradCheck> {
    let (_, grad) = net.loss_and_grad(batch)?;
    check_gradient(
        net.tensors(),
        &net.params,
        &grad,
        epsilon,
        DEFAULT_SAMPLES,
        seed,
        |p| net.loss_with(p, batch),
    )
}
