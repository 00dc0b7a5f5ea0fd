//! Small layers built on the autodiff graph.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Uniform in ±1/sqrt(fan_in).
pub fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), uniform_init(rng, input, output, input));
        let b = store.add(format!("{name}.b"), uniform_init(rng, 1, output, input));
        Self { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for id in [self.w, self.b] {
            store.get_mut(id).as_mut_slice().fill(0.0);
        }
    }
}

/// affine -> tanh -> affine
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.0"), input, hidden, rng),
            second: Linear::new(store, &format!("{name}.1"), hidden, output, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.first.forward(g, x);
        let h = g.tanh(h);
        self.second.forward(g, h)
    }
}

/// Gate order in the packed weights: input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = store.add(format!("{name}.wx"), uniform_init(rng, input, 4 * hidden, hidden));
        let wh = store.add(format!("{name}.wh"), uniform_init(rng, hidden, 4 * hidden, hidden));
        let b = store.add(format!("{name}.b"), uniform_init(rng, 1, 4 * hidden, hidden));
        Self { wx, wh, b, hidden }
    }

    pub fn step(&self, g: &mut Graph<'_>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let wx = g.param(self.wx);
        let wh = g.param(self.wh);
        let b = g.param(self.b);
        let zx = g.matmul(x, wx);
        let zh = g.matmul(h, wh);
        let z = g.add(zx, zh);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, n, n);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * n, n);
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * n, n);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let ig = g.mul(i, cand);
        let c_new = g.add(fc, ig);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }
}

/// Two stacked LSTM layers.
#[derive(Debug, Clone, Copy)]
pub struct Lstm2 {
    pub layers: [LstmLayer; 2],
}

/// Per-layer (h, c) for a batch.
pub type LstmState = [(Var, Var); 2];

impl Lstm2 {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                LstmLayer::new(store, &format!("{name}.l0"), input, hidden, rng),
                LstmLayer::new(store, &format!("{name}.l1"), hidden, hidden, rng),
            ],
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn zero_state(&self, g: &mut Graph<'_>, batch: usize) -> LstmState {
        let n = self.hidden();
        let mut s = || {
            let h = g.constant(Matrix::zeros(batch, n));
            let c = g.constant(Matrix::zeros(batch, n));
            (h, c)
        };
        [s(), s()]
    }

    /// One time step. When `mask` (batch × 1, entries 0/1) is given, rows with
    /// mask 0 keep their previous state.
    pub fn step(&self, g: &mut Graph<'_>, x: Var, state: LstmState, mask: Option<Var>) -> LstmState {
        let mut input = x;
        let mut out = state;
        for (k, layer) in self.layers.iter().enumerate() {
            let (h0, c0) = state[k];
            let (h1, c1) = layer.step(g, input, h0, c0);
            let (h, c) = match mask {
                Some(m) => (blend(g, h0, h1, m), blend(g, c0, c1, m)),
                None => (h1, c1),
            };
            out[k] = (h, c);
            input = h;
        }
        out
    }
}

fn blend(g: &mut Graph<'_>, old: Var, new: Var, mask: Var) -> Var {
    let d = g.sub(new, old);
    let d = g.mul_col(d, mask);
    g.add(old, d)
}

pub fn store_tensors(store: &ParamStore, prefix: &str) -> BTreeMap<String, Matrix> {
    store
        .iter()
        .map(|(name, m)| (format!("{prefix}{name}"), m.clone()))
        .collect()
}

/// Copies `prefix + name` tensors into the store; every parameter must be present with matching shape.
pub fn restore_tensors(store: &mut ParamStore, tensors: &BTreeMap<String, Matrix>, prefix: &str) -> Result<()> {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let key = format!("{prefix}{}", store.name(id));
        let src = tensors
            .get(&key)
            .ok_or_else(|| Error::InvalidArgument(format!("missing tensor {key}")))?;
        let dst = store.get_mut(id);
        if src.shape() != dst.shape() {
            return Err(Error::Shape(format!(
                "{key}: stored {:?}, model expects {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src.clone();
    }
    Ok(())
}
