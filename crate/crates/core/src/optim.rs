use std::collections::BTreeMap;

use crate::autodiff::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<ParamId, Matrix>,
    v: BTreeMap<ParamId, Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let (rows, cols) = g.shape();
            let m = self.m.entry(id).or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.v.entry(id).or_insert_with(|| Matrix::zeros(rows, cols));
            let p = store.get_mut(id);
            for k in 0..g.len() {
                let gk = g.as_slice()[k];
                let mk = &mut m.as_mut_slice()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let vk = &mut v.as_mut_slice()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let mhat = m.as_slice()[k] / bc1;
                let vhat = v.as_slice()[k] / bc2;
                if self.lr != 0.0 {
                    p.as_mut_slice()[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }

    /// Moments keyed `{prefix}m.{param}` / `{prefix}v.{param}`, plus the step count.
    pub fn to_tensors(&self, store: &ParamStore, prefix: &str) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        for (id, m) in &self.m {
            out.insert(format!("{prefix}m.{}", store.name(*id)), m.clone());
        }
        for (id, v) in &self.v {
            out.insert(format!("{prefix}v.{}", store.name(*id)), v.clone());
        }
        out.insert(format!("{prefix}t"), Matrix::from_vec(1, 1, vec![self.t as f64]));
        out
    }

    pub fn restore(&mut self, store: &ParamStore, tensors: &BTreeMap<String, Matrix>, prefix: &str) -> Result<()> {
        let t = tensors
            .get(&format!("{prefix}t"))
            .ok_or_else(|| Error::InvalidArgument(format!("missing tensor {prefix}t")))?;
        self.t = t.as_slice()[0] as u64;
        self.m.clear();
        self.v.clear();
        for id in store.ids() {
            let name = store.name(id);
            if let Some(m) = tensors.get(&format!("{prefix}m.{name}")) {
                self.m.insert(id, m.clone());
            }
            if let Some(v) = tensors.get(&format!("{prefix}v.{name}")) {
                self.v.insert(id, v.clone());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::row_vector(&[1.0, -2.0]));
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.param(id);
            let y = g.square(x);
            let l = g.sum(y);
            g.backward(l)
        };
        let mut opt = Adam::new(0.1);
        opt.step(&mut store, &grads);
        let p = store.get(id);
        assert!((p[(0, 0)] - 0.9).abs() < 1e-7);
        assert!((p[(0, 1)] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::row_vector(&[3.0, -4.0, 0.5]));
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let grads = {
                let mut g = Graph::new(&store);
                let x = g.param(id);
                let y = g.square(x);
                let l = g.sum(y);
                g.backward(l)
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.get(id).max_abs() < 1e-3);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::row_vector(&[0.25, 1.5]));
        let before = store.get(id).clone();
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.param(id);
            let l = g.sum(x);
            g.backward(l)
        };
        Adam::new(0.0).step(&mut store, &grads);
        assert_eq!(store.get(id), &before);
    }
}
