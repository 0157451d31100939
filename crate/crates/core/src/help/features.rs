//! Random command projections and fixed-length sequence features for the
//! forest baseline.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::CommandSequence;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_PROJECTION_DIM: usize = 8;

/// `|C| x dim` matrix with i.i.d. `Normal(0, 1/dim)` entries. Row `i` is the
/// code of command `i`. Only the shape and seed are stored; the entries are
/// regenerated on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProjectionFile", into = "ProjectionFile")]
pub struct ProjectionMatrix {
    vocab_size: usize,
    dim: usize,
    seed: u64,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProjectionFile {
    vocab_size: usize,
    dim: usize,
    seed: u64,
}

impl From<ProjectionMatrix> for ProjectionFile {
    fn from(p: ProjectionMatrix) -> Self {
        ProjectionFile {
            vocab_size: p.vocab_size,
            dim: p.dim,
            seed: p.seed,
        }
    }
}

impl TryFrom<ProjectionFile> for ProjectionMatrix {
    type Error = Error;

    fn try_from(f: ProjectionFile) -> Result<Self> {
        make_projection(f.vocab_size, f.dim, f.seed)
    }
}

pub fn make_projection(vocab_size: usize, dim: usize, seed: u64) -> Result<ProjectionMatrix> {
    if dim < 1 {
        return Err(Error::InvalidConfig(
            "projection dimension must be at least 1".into(),
        ));
    }
    let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("positive std");
    let mut r = rng::seeded(seed);
    let entries = (0..vocab_size * dim)
        .map(|_| normal.sample(&mut r))
        .collect();
    Ok(ProjectionMatrix {
        vocab_size,
        dim,
        seed,
        entries,
    })
}

impl ProjectionMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, command: usize) -> &[f64] {
        &self.entries[command * self.dim..(command + 1) * self.dim]
    }
}

/// How time gaps enter the models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeInput {
    /// Gaps are ignored.
    Off,
    /// Raw seconds.
    #[default]
    Seconds,
    /// `ln(1 + seconds)`.
    Log1p,
}

impl TimeInput {
    pub fn from_flags(use_time: bool, log1p: bool) -> Self {
        match (use_time, log1p) {
            (false, _) => TimeInput::Off,
            (true, false) => TimeInput::Seconds,
            (true, true) => TimeInput::Log1p,
        }
    }

    pub fn enabled(self) -> bool {
        self != TimeInput::Off
    }

    pub fn width(self) -> usize {
        usize::from(self.enabled())
    }

    pub fn transform(self, seconds: f64) -> f64 {
        match self {
            TimeInput::Log1p => seconds.max(0.0).ln_1p(),
            _ => seconds,
        }
    }
}

/// Feature recipe of the forest baseline: per-step `projection ⊕ Δt`
/// vectors pooled by element-wise mean and max, followed by the length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub projection: ProjectionMatrix,
    pub time: TimeInput,
}

impl FeatureRecipe {
    pub fn step_width(&self) -> usize {
        self.projection.dim() + self.time.width()
    }

    /// `2 * step_width + 1`: 19 with time, 17 without, at the default
    /// projection size.
    pub fn width(&self) -> usize {
        2 * self.step_width() + 1
    }

    pub fn featurize(&self, seq: &CommandSequence) -> Result<Vec<f64>> {
        if seq.is_empty() {
            return Err(Error::NoContext { needed: 1, got: 0 });
        }
        let w = self.step_width();
        let mut mean = vec![0.0; w];
        let mut max = vec![f64::NEG_INFINITY; w];
        let mut step = vec![0.0; w];
        for (j, c) in seq.commands.iter().enumerate() {
            if c.index() >= self.projection.vocab_size() {
                return Err(Error::CommandOutOfRange {
                    id: c.index(),
                    size: self.projection.vocab_size(),
                });
            }
            step[..self.projection.dim()].copy_from_slice(self.projection.row(c.index()));
            if self.time.enabled() {
                step[w - 1] = self.time.transform(seq.gap(j));
            }
            for i in 0..w {
                mean[i] += step[i];
                max[i] = max[i].max(step[i]);
            }
        }
        let n = seq.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean.extend(max);
        mean.push(n);
        Ok(mean)
    }
}

/// Forest features of `example` with timed steps and raw seconds.
pub fn featurize_rf(example: &CommandSequence, proj: &ProjectionMatrix) -> Result<Vec<f64>> {
    FeatureRecipe {
        projection: proj.clone(),
        time: TimeInput::Seconds,
    }
    .featurize(example)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CommandId;

    #[test]
    fn projection_is_seeded() {
        assert_eq!(
            make_projection(20, 8, 4).unwrap(),
            make_projection(20, 8, 4).unwrap()
        );
        assert_ne!(
            make_projection(20, 8, 4).unwrap(),
            make_projection(20, 8, 5).unwrap()
        );
        assert!(make_projection(20, 0, 4).is_err());
    }

    #[test]
    fn projection_columns_are_centred() {
        let p = make_projection(300, 8, 0).unwrap();
        for col in 0..8 {
            let mean = (0..300).map(|r| p.row(r)[col]).sum::<f64>() / 300.0;
            assert!(mean.abs() < 0.1, "column {col}: {mean}");
        }
        let var = p.entries.iter().map(|x| x * x).sum::<f64>() / p.entries.len() as f64;
        assert!((var - 0.125).abs() < 0.02, "{var}");
    }

    #[test]
    fn square_projection_is_not_special_cased() {
        let p = make_projection(8, 8, 1).unwrap();
        let off_diagonal = (0..8)
            .flat_map(|r| (0..8).map(move |c| (r, c)))
            .filter(|(r, c)| r != c);
        assert!(off_diagonal.map(|(r, c)| p.row(r)[c].abs()).sum::<f64>() > 1.0);
    }

    #[test]
    fn projection_survives_serialization() {
        let p = make_projection(10, 8, 77).unwrap();
        let back: ProjectionMatrix =
            serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn single_step_mean_equals_max() {
        let p = make_projection(5, 8, 2).unwrap();
        let f = featurize_rf(
            &CommandSequence::with_gaps("u", vec![CommandId(3)], vec![4.5]),
            &p,
        )
        .unwrap();
        assert_eq!(f.len(), 19);
        assert_eq!(f[..9], f[9..18]);
        assert_eq!(&f[..8], p.row(3));
        assert_eq!(f[8], 4.5);
        assert_eq!(f[18], 1.0);
    }

    #[test]
    fn duplicating_steps_keeps_pooling() {
        let p = make_projection(5, 8, 2).unwrap();
        let a = CommandSequence::with_gaps("u", vec![CommandId(1), CommandId(4)], vec![0.0, 2.0]);
        let b = CommandSequence::with_gaps(
            "u",
            vec![CommandId(1), CommandId(4), CommandId(1), CommandId(4)],
            vec![0.0, 2.0, 0.0, 2.0],
        );
        let (fa, fb) = (featurize_rf(&a, &p).unwrap(), featurize_rf(&b, &p).unwrap());
        for i in 0..18 {
            assert!((fa[i] - fb[i]).abs() < 1e-15);
        }
        assert_eq!((fa[18], fb[18]), (2.0, 4.0));
    }

    #[test]
    fn hand_computed_two_step_features() {
        let p = make_projection(3, 8, 9).unwrap();
        let s = CommandSequence::with_gaps("u", vec![CommandId(0), CommandId(2)], vec![0.0, 7.0]);
        let f = featurize_rf(&s, &p).unwrap();
        let (r0, r2) = (p.row(0), p.row(2));
        for i in 0..8 {
            assert_eq!(f[i], (r0[i] + r2[i]) / 2.0);
            assert_eq!(f[9 + i], r0[i].max(r2[i]));
        }
        assert_eq!((f[8], f[17], f[18]), (3.5, 7.0, 2.0));
    }

    #[test]
    fn untimed_recipe_drops_the_gap() {
        let r = FeatureRecipe {
            projection: make_projection(3, 8, 0).unwrap(),
            time: TimeInput::Off,
        };
        let s = CommandSequence::with_gaps("u", vec![CommandId(0)], vec![99.0]);
        let f = r.featurize(&s).unwrap();
        assert_eq!(f.len(), 17);
        assert!(!f.contains(&99.0));
        assert!(r.featurize(&CommandSequence::new("u", vec![])).is_err());
    }
}
