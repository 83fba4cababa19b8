//! Bias-corrected Adam over a [`ParamStore`].

use super::params::{ParamId, ParamStore};
use super::tape::Gradients;
use super::Tensor;

/// Optimizer state: one first/second moment buffer per trainable parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    trainable: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(store: &ParamStore, trainable: Vec<ParamId>, lr: f32) -> Self {
        let m = trainable
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).shape()))
            .collect();
        let v = trainable
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).shape()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            trainable,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn trainable(&self) -> &[ParamId] {
        &self.trainable
    }

    /// One update. Parameters without a gradient this step receive a zero
    /// gradient (moments decay); parameters outside the trainable set are
    /// untouched bitwise.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - (self.beta1 as f64).powf(t);
        let bc2 = 1.0 - (self.beta2 as f64).powf(t);
        for (slot, &id) in self.trainable.iter().enumerate() {
            let param = store.get(id);
            let n = param.len();
            let zero;
            let g = match grads.param(id) {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0f32; n];
                    &zero
                }
            };
            let mut m = self.m[slot].data().to_vec();
            let mut v = self.v[slot].data().to_vec();
            let mut p = param.data().to_vec();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                p[i] -= (self.lr as f64 * mhat / (vhat.sqrt() + self.eps as f64)) as f32;
            }
            let shape = param.shape().to_vec();
            self.m[slot] = Tensor::new(&shape, m).expect("moment shape");
            self.v[slot] = Tensor::new(&shape, v).expect("moment shape");
            store.set(id, Tensor::new(&shape, p).expect("param shape"));
        }
    }

    /// Flattened (m, v) buffers in trainable order, for checkpoints.
    pub fn flatten_moments(&self) -> (Vec<f32>, Vec<f32>) {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (a, b) in self.m.iter().zip(self.v.iter()) {
            m.extend_from_slice(a.data());
            v.extend_from_slice(b.data());
        }
        (m, v)
    }

    pub fn restore_moments(&mut self, m: &[f32], v: &[f32], step: u64) {
        let mut off = 0;
        for slot in 0..self.trainable.len() {
            let n = self.m[slot].len();
            let shape = self.m[slot].shape().to_vec();
            self.m[slot] = Tensor::new(&shape, m[off..off + n].to_vec()).expect("moment shape");
            self.v[slot] = Tensor::new(&shape, v[off..off + n].to_vec()).expect("moment shape");
            off += n;
        }
        self.step = step;
    }
}
