//! Bootstrap-aggregated CART classification trees with Gini splits.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            min_leaf: 2,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// `p_help` is the fraction of positives among the leaf's samples.
    Leaf { p_help: f64 },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in pre-order; index 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p_help } => return p_help,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub dim: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean of the trees' leaf probabilities of class help.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    mtry: usize,
    min_leaf: usize,
    rng: Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf {
            p_help: pos as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best `(feature, threshold, impurity)` among `mtry` random features.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        let mut best: Option<(usize, f64, f64)> = None;
        let features = sample(&mut self.rng, d, self.mtry.min(d)).into_vec();
        let mut order = idx.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for s in 1..n {
                left_pos += usize::from(self.y[order[s - 1]]);
                let (lo, hi) = (self.x[order[s - 1]][f], self.x[order[s]][f]);
                if lo == hi || s < self.min_leaf || n - s < self.min_leaf {
                    continue;
                }
                let impurity = (s as f64 * gini(left_pos, s)
                    + (n - s) as f64 * gini(total_pos - left_pos, n - s))
                    / n as f64;
                if best.is_none_or(|b| impurity < b.2) {
                    best = Some((f, lo + (hi - lo) / 2.0, impurity));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        if pos == 0 || pos == idx.len() || idx.len() < 2 * self.min_leaf {
            return self.leaf(&idx);
        }
        let Some((feature, threshold, impurity)) = self.best_split(&idx) else {
            return self.leaf(&idx);
        };
        if impurity >= gini(pos, idx.len()) {
            return self.leaf(&idx);
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p_help: 0.0 });
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

pub fn fit_forest(features: &[Vec<f64>], labels: &[bool], cfg: &ForestConfig) -> Result<Forest> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: features.len(),
        });
    }
    if features.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: features.len(),
        });
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    if cfg.n_trees < 1 || cfg.min_leaf < 1 {
        return Err(Error::InvalidConfig(
            "forest needs at least one tree and min_leaf >= 1".into(),
        ));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mtry = cfg
        .max_features
        .unwrap_or_else(|| ((dim as f64).sqrt().round() as usize).max(1));
    let n = features.len();
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut r = rng::substream(cfg.seed, t as u64);
            let idx: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
            let mut b = Builder {
                x: features,
                y: labels,
                mtry,
                min_leaf: cfg.min_leaf,
                rng: r,
                nodes: Vec::new(),
            };
            b.grow(idx);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { dim, trees })
}
