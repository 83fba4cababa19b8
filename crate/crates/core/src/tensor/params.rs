//! Flat registry of trainable parameters.
//!
//! Model components register tensors here and keep the returned [`ParamId`]s.
//! Gradients, the optimizer and checkpoints are all keyed by these ids, so a
//! parameter leased onto several tape nodes (shared weights) accumulates one
//! gradient.

use crate::error::TensorError;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        id
    }

    /// Register a weight with fan-in-scaled uniform init in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn register_fan_in(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let t = Tensor::rand_uniform(shape, -bound, bound, rng);
        self.register(name, t)
    }

    /// Register a zero-initialized bias/shift.
    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.register(name, Tensor::zeros(shape))
    }

    /// Register a one-initialized gain.
    pub fn register_ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.register(name, Tensor::full(shape, 1.0))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "parameter {} shape changed",
            self.names[id.0]
        );
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total element count across all parameters.
    pub fn total_len(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Concatenate all parameters into one flat vector (registration order).
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.total_len());
        for t in &self.values {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Restore all parameters from a flat vector produced by [`flatten`].
    ///
    /// [`flatten`]: ParamStore::flatten
    pub fn unflatten(&mut self, flat: &[f32]) -> Result<(), TensorError> {
        if flat.len() != self.total_len() {
            return Err(TensorError::Invalid(format!(
                "flat parameter vector has {} values, store holds {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut off = 0;
        for i in 0..self.values.len() {
            let n = self.values[i].len();
            let shape = self.values[i].shape().to_vec();
            self.values[i] = Tensor::new(&shape, flat[off..off + n].to_vec())?;
            off += n;
        }
        Ok(())
    }

    /// (name, shape, flat offset) for every parameter, registration order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut off = 0;
        for (n, t) in self.names.iter().zip(self.values.iter()) {
            out.push((n.clone(), t.shape().to_vec(), off));
            off += t.len();
        }
        out
    }
}
