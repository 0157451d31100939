//! Stacked LSTM with full backpropagation through time.
//!
//! Gates are laid out `[input, forget, candidate, output]` in every weight
//! matrix and bias. One step computes
//!
//! ```text
//! z = Wx x + Wh h' + b
//! c = sigmoid(z_f) * c' + sigmoid(z_i) * tanh(z_g)
//! h = sigmoid(z_o) * tanh(c)
//! ```
//!
//! Training runs a whole sequence layer by layer and keeps every step's
//! activations. Streaming inference ([`StackState`]) runs the same per-step
//! routine time-major, so both paths produce bitwise-identical outputs.

use super::params::{matvec_add, matvec_t_add, outer_add, sigmoid, ParamLayout, TensorKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
}

/// Activations of one step of one layer.
#[derive(Clone, Debug, Default)]
pub struct StepCache {
    /// Activated gates `[i, f, g, o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmLayer {
    pub fn alloc(layout: &mut ParamLayout, prefix: &str, input: usize, hidden: usize) -> Self {
        let wx = layout.alloc(
            format!("{prefix}.wx"),
            4 * hidden,
            input,
            TensorKind::Weight,
        );
        let wh = layout.alloc(
            format!("{prefix}.wh"),
            4 * hidden,
            hidden,
            TensorKind::Weight,
        );
        let b = layout.alloc(format!("{prefix}.b"), 4 * hidden, 1, TensorKind::GateBias);
        LstmLayer {
            input,
            hidden,
            wx,
            wh,
            b,
        }
    }

    fn wx<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.wx..self.wx + 4 * self.hidden * self.input]
    }

    fn wh<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.wh..self.wh + 4 * self.hidden * self.hidden]
    }

    pub fn step(&self, p: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64], out: &mut StepCache) {
        let h = self.hidden;
        debug_assert_eq!(x.len(), self.input);
        let mut z = p[self.b..self.b + 4 * h].to_vec();
        matvec_add(self.wx(p), x, &mut z);
        matvec_add(self.wh(p), h_prev, &mut z);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = if (2 * h..3 * h).contains(&j) {
                zj.tanh()
            } else {
                sigmoid(*zj)
            };
        }
        out.c.clear();
        out.tanh_c.clear();
        out.h.clear();
        for j in 0..h {
            let c = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            let tc = c.tanh();
            out.c.push(c);
            out.tanh_c.push(tc);
            out.h.push(z[3 * h + j] * tc);
        }
        out.gates = z;
    }

    /// Backward through one step. `dc` holds the cell gradient from the
    /// next step on entry and the gradient for `c_prev` on exit.
    #[allow(clippy::too_many_arguments)]
    fn backward_step(
        &self,
        p: &[f64],
        grad: &mut [f64],
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        cache: &StepCache,
        dh: &[f64],
        dc: &mut [f64],
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let h = self.hidden;
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * h];
        for j in 0..h {
            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = cache.tanh_c[j];
            let d_o = dh[j] * tc;
            let dcj = dh[j] * o * (1.0 - tc * tc) + dc[j];
            dz[j] = dcj * gg * i * (1.0 - i);
            dz[h + j] = dcj * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dcj * i * (1.0 - gg * gg);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc[j] = dcj * f;
        }
        for (gb, d) in grad[self.b..self.b + 4 * h].iter_mut().zip(&dz) {
            *gb += d;
        }
        outer_add(&mut grad[self.wx..self.wx + 4 * h * self.input], &dz, x);
        outer_add(&mut grad[self.wh..self.wh + 4 * h * h], &dz, h_prev);
        matvec_t_add(self.wx(p), &dz, dx);
        matvec_t_add(self.wh(p), &dz, dh_prev);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

/// Every step's activations for one sequence, `steps[layer][t]`.
#[derive(Clone, Debug)]
pub struct StackTrace {
    pub inputs: Vec<Vec<f64>>,
    pub steps: Vec<Vec<StepCache>>,
}

impl StackTrace {
    pub fn top(&self, t: usize) -> &[f64] {
        &self.steps.last().expect("at least one layer")[t].h
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Recurrent state for step-by-step inference.
#[derive(Clone, Debug)]
pub struct StackState {
    caches: Vec<StepCache>,
    started: bool,
}

impl LstmStack {
    pub fn alloc(
        layout: &mut ParamLayout,
        prefix: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                LstmLayer::alloc(
                    layout,
                    &format!("{prefix}.l{l}"),
                    if l == 0 { input } else { hidden },
                    hidden,
                )
            })
            .collect();
        LstmStack { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().expect("at least one layer").hidden
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn forward(&self, p: &[f64], inputs: Vec<Vec<f64>>) -> StackTrace {
        let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let zeros = vec![0.0; layer.hidden];
            let mut out: Vec<StepCache> = Vec::with_capacity(inputs.len());
            for t in 0..inputs.len() {
                let x: &[f64] = if l == 0 {
                    &inputs[t]
                } else {
                    &steps[l - 1][t].h
                };
                let (hp, cp) = if t == 0 {
                    (&zeros[..], &zeros[..])
                } else {
                    (&out[t - 1].h[..], &out[t - 1].c[..])
                };
                let mut cache = StepCache::default();
                layer.step(p, x, hp, cp, &mut cache);
                out.push(cache);
            }
            steps.push(out);
        }
        StackTrace { inputs, steps }
    }

    /// Backpropagates `dh_top[t]` (gradient w.r.t. the top layer's output at
    /// each step) and returns the gradient w.r.t. each step's input.
    pub fn backward(
        &self,
        p: &[f64],
        grad: &mut [f64],
        trace: &StackTrace,
        dh_top: Vec<Vec<f64>>,
    ) -> Vec<Vec<f64>> {
        let n = trace.len();
        let mut dh_in = dh_top;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let hsz = layer.hidden;
            let zeros = vec![0.0; hsz];
            let mut dx_all = vec![vec![0.0; layer.input]; n];
            let mut dh_next = vec![0.0; hsz];
            let mut dc = vec![0.0; hsz];
            for t in (0..n).rev() {
                let dh: Vec<f64> = dh_in[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                let x: &[f64] = if l == 0 {
                    &trace.inputs[t]
                } else {
                    &trace.steps[l - 1][t].h
                };
                let (hp, cp) = if t == 0 {
                    (&zeros[..], &zeros[..])
                } else {
                    (&trace.steps[l][t - 1].h[..], &trace.steps[l][t - 1].c[..])
                };
                let mut dh_prev = vec![0.0; hsz];
                layer.backward_step(
                    p,
                    grad,
                    x,
                    hp,
                    cp,
                    &trace.steps[l][t],
                    &dh,
                    &mut dc,
                    &mut dx_all[t],
                    &mut dh_prev,
                );
                dh_next = dh_prev;
            }
            dh_in = dx_all;
        }
        dh_in
    }

    pub fn start(&self) -> StackState {
        StackState {
            caches: vec![StepCache::default(); self.layers.len()],
            started: false,
        }
    }

    /// Advances the stream by one input and returns the top hidden state.
    pub fn step<'s>(&self, p: &[f64], state: &'s mut StackState, x: &[f64]) -> &'s [f64] {
        let started = state.started;
        let mut input = x.to_vec();
        for (layer, cache) in self.layers.iter().zip(state.caches.iter_mut()) {
            let zeros = vec![0.0; layer.hidden];
            let (hp, cp) = if started {
                (cache.h.clone(), cache.c.clone())
            } else {
                (zeros.clone(), zeros)
            };
            layer.step(p, &input, &hp, &cp, cache);
            input.clone_from(&cache.h);
        }
        state.started = true;
        &state.caches.last().expect("at least one layer").h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack() -> (LstmStack, Vec<f64>) {
        let mut layout = ParamLayout::default();
        let s = LstmStack::alloc(&mut layout, "s", 3, 4, 2);
        (s, layout.init(9))
    }

    fn inputs(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|t| vec![t as f64 * 0.1, 1.0 - t as f64 * 0.2, 0.5])
            .collect()
    }

    #[test]
    fn streaming_matches_batch_bitwise() {
        let (s, p) = stack();
        let xs = inputs(6);
        let trace = s.forward(&p, xs.clone());
        let mut state = s.start();
        for (t, x) in xs.iter().enumerate() {
            assert_eq!(s.step(&p, &mut state, x), trace.top(t));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (s, mut p) = stack();
        let xs = inputs(5);
        // Loss: sum over steps of the top hidden state weighted by (t + 1).
        let loss = |p: &[f64]| -> f64 {
            let tr = s.forward(p, xs.clone());
            (0..5)
                .map(|t| tr.top(t).iter().sum::<f64>() * (t + 1) as f64)
                .sum()
        };
        let trace = s.forward(&p, xs.clone());
        let dh_top: Vec<Vec<f64>> = (0..5).map(|t| vec![(t + 1) as f64; 4]).collect();
        let mut grad = vec![0.0; p.len()];
        let dx = s.backward(&p, &mut grad, &trace, dh_top);
        let eps = 1e-5;
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + eps;
            let up = loss(&p);
            p[i] = orig - eps;
            let down = loss(&p);
            p[i] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!(
                (num - grad[i]).abs() < 1e-7,
                "param {i}: {num} vs {}",
                grad[i]
            );
        }
        // Input gradient at t = 2, component 0.
        let mut xs2 = xs.clone();
        xs2[2][0] += eps;
        let tr_up = s.forward(&p, xs2.clone());
        xs2[2][0] -= 2.0 * eps;
        let tr_dn = s.forward(&p, xs2);
        let f = |tr: &StackTrace| {
            (0..5)
                .map(|t| tr.top(t).iter().sum::<f64>() * (t + 1) as f64)
                .sum::<f64>()
        };
        let num = (f(&tr_up) - f(&tr_dn)) / (2.0 * eps);
        assert!((num - dx[2][0]).abs() < 1e-7);
    }
}
