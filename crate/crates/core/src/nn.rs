//! Layers built on the autodiff tape.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Var};

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

/// Inverted dropout with a mask drawn from `rng`. A `None` rng means
/// evaluation mode, where this is the identity.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let (r, c) = g.shape(x);
            let mask = Array2::from_shape_fn((r, c), |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
            g.mul_const(x, mask)
        }
        _ => x,
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, input, output));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, output)));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Array2::ones((1, dim)));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, dim)));
        Self { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.normalize(x, Self::EPS);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Keys and values projected once and reused across many queries.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedMemory {
    pub keys: Var,
    pub values: Var,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert_eq!(dim % heads, 0, "dim must divide into heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            heads,
            dim,
        }
    }

    pub fn project_memory(&self, g: &mut Graph, memory: Var) -> ProjectedMemory {
        ProjectedMemory {
            keys: self.key.forward(g, memory),
            values: self.value.forward(g, memory),
        }
    }

    pub fn attend(&self, g: &mut Graph, query: Var, memory: ProjectedMemory) -> Var {
        let q = self.query.forward(g, query);
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim);
            let kh = g.slice_cols(memory.keys, h * head_dim, head_dim);
            let vh = g.slice_cols(memory.values, h * head_dim, head_dim);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores);
            outs.push(g.matmul(weights, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.output.forward(g, joined)
    }

    pub fn forward(&self, g: &mut Graph, query: Var, memory: Var) -> Var {
        let mem = self.project_memory(g, memory);
        self.attend(g, query, mem)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout_rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
        let h = self.inner.forward(g, x);
        let h = g.relu(h);
        let h = dropout(g, h, dropout_rate, rng);
        self.outer.forward(g, h)
    }
}

/// Batched LSTM cell, gate order input/forget/cell/output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Array2::zeros((1, 4 * hidden));
        // forget gate starts open
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        Self {
            input_weight: store.add(format!("{name}.input_weight"), uniform(rng, input, 4 * hidden, bound)),
            hidden_weight: store.add(format!("{name}.hidden_weight"), uniform(rng, hidden, 4 * hidden, bound)),
            bias: store.add(format!("{name}.bias"), bias),
            hidden,
        }
    }

    /// One step for a batch: returns the new `(h, c)`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let wi = g.param(self.input_weight);
        let wh = g.param(self.hidden_weight);
        let b = g.param(self.bias);
        let xi = g.matmul(x, wi);
        let hh = g.matmul(h, wh);
        let gates = g.add(xi, hh);
        let gates = g.add_row(gates, b);
        let n = self.hidden;
        let i = g.slice_cols(gates, 0, n);
        let f = g.slice_cols(gates, n, n);
        let cand = g.slice_cols(gates, 2 * n, n);
        let o = g.slice_cols(gates, 3 * n, n);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }
}

/// GRU cell with reset/update/candidate gates:
///
/// ```text
/// r  = sigmoid(x Wir + bir + h Whr + bhr)
/// z  = sigmoid(x Wiz + biz + h Whz + bhz)
/// n  = tanh(x Win + bin + r * (h Whn + bhn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub input_bias: ParamId,
    pub hidden_bias: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            input_weight: store.add(format!("{name}.input_weight"), uniform(rng, input, 3 * hidden, bound)),
            hidden_weight: store.add(format!("{name}.hidden_weight"), uniform(rng, hidden, 3 * hidden, bound)),
            input_bias: store.add(format!("{name}.input_bias"), uniform(rng, 1, 3 * hidden, bound)),
            hidden_bias: store.add(format!("{name}.hidden_bias"), uniform(rng, 1, 3 * hidden, bound)),
            hidden,
        }
    }

    /// One step for a batch of `(input, hidden)` row pairs.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let wi = g.param(self.input_weight);
        let wh = g.param(self.hidden_weight);
        let bi = g.param(self.input_bias);
        let bh = g.param(self.hidden_bias);
        let gi = g.matmul(x, wi);
        let gi = g.add_row(gi, bi);
        let gh = g.matmul(h, wh);
        let gh = g.add_row(gh, bh);
        let n = self.hidden;
        let ir = g.slice_cols(gi, 0, n);
        let iz = g.slice_cols(gi, n, n);
        let in_ = g.slice_cols(gi, 2 * n, n);
        let hr = g.slice_cols(gh, 0, n);
        let hz = g.slice_cols(gh, n, n);
        let hn = g.slice_cols(gh, 2 * n, n);
        let r = g.add(ir, hr);
        let r = g.sigmoid(r);
        let z = g.add(iz, hz);
        let z = g.sigmoid(z);
        let gated = g.mul(r, hn);
        let cand = g.add(in_, gated);
        let cand = g.tanh(cand);
        let keep_new = g.one_minus(z);
        let fresh = g.mul(keep_new, cand);
        let carry = g.mul(z, h);
        g.add(fresh, carry)
    }
}
