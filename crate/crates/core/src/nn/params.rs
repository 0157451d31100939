//! Flat parameter storage with named tensor views.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;

pub const INIT_SCALE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub kind: TensorKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorKind {
    Weight,
    Bias,
    /// LSTM bias laid out as four gate blocks `[i, f, g, o]`.
    GateBias,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<Tensor>,
    pub total: usize,
}

impl ParamLayout {
    pub fn alloc(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        kind: TensorKind,
    ) -> usize {
        let offset = self.total;
        self.tensors.push(Tensor {
            name: name.into(),
            offset,
            rows,
            cols,
            kind,
        });
        self.total += rows * cols;
        offset
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Weights uniform in `(-INIT_SCALE, INIT_SCALE)`; biases zero except the
    /// LSTM forget gate, which starts at `FORGET_BIAS`.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        let mut p = vec![0.0; self.total];
        for t in &self.tensors {
            match t.kind {
                TensorKind::Weight => {
                    for x in &mut p[t.range()] {
                        *x = r.gen_range(-INIT_SCALE..INIT_SCALE);
                    }
                }
                TensorKind::Bias => {}
                TensorKind::GateBias => {
                    let h = t.len() / 4;
                    for x in &mut p[t.offset + h..t.offset + 2 * h] {
                        *x = FORGET_BIAS;
                    }
                }
            }
        }
        p
    }
}

/// `out[r] += sum_c m[r, c] * x[c]` for a row-major `rows x x.len()` matrix.
#[inline]
pub fn matvec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out[c] += sum_r m[r, c] * y[r]`.
#[inline]
pub fn matvec_t_add(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

/// `g[r, c] += y[r] * x[c]`.
#[inline]
pub fn outer_add(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (o, &b) in row.iter_mut().zip(x) {
            *o += yr * b;
        }
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// `-log softmax(logits)[target]` in the log domain.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    -(logits[target] - max - lse)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_kinds() {
        let mut l = ParamLayout::default();
        l.alloc("w", 3, 4, TensorKind::Weight);
        l.alloc("b", 8, 1, TensorKind::GateBias);
        l.alloc("o", 2, 1, TensorKind::Bias);
        let p = l.init(1);
        assert_eq!(p.len(), 22);
        assert!(p[..12].iter().all(|x| x.abs() < INIT_SCALE));
        assert_eq!(&p[12..20], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&p[20..], &[0.0, 0.0]);
        assert_eq!(l.init(1), p);
    }

    #[test]
    fn softmax_and_cross_entropy_agree() {
        let logits = [1.0, -2.0, 0.5, 800.0];
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let small = [0.3, -0.1, 0.2];
        let q = softmax(&small);
        assert!((cross_entropy(&small, 1) + q[1].ln()).abs() < 1e-12);
        assert!(cross_entropy(&logits, 0).is_finite());
    }

    #[test]
    fn matvec_helpers() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec_add(&m, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut back = [0.0; 3];
        matvec_t_add(&m, &[1.0, 1.0], &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);
        let mut g = [0.0; 6];
        outer_add(&mut g, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(g, [1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }
}
