//! Dense row-major f32 tensors with reverse-mode automatic differentiation.
//!
//! `Tensor` is an immutable value (cheap to clone, data behind an `Arc`).
//! Differentiable computation is recorded on a [`Tape`]; leaves can be bound
//! to entries of a [`ParamStore`] so gradients come back keyed by parameter.
//! Reductions and dot products accumulate in f64 and store f32.

mod adam;
pub(crate) mod kernels;
mod params;
mod tape;

pub use adam::AdamState;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Op, Tape, Var};

use std::sync::Arc;

use crate::error::TensorError;
use crate::rng;
use rand_chacha::ChaCha8Rng;

/// Dense n-dimensional array of f32 values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    /// Standard normal entries.
    pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f32; n];
        rng::fill_normal(rng, &mut data);
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| rng::uniform(rng, lo as f64, hi as f64) as f32)
            .collect();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a length-1 tensor.
    pub fn item(&self) -> f32 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Same data viewed under a different shape.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor (non-differentiable helper).
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Elementwise binary combination (non-differentiable helper).
    pub fn zip(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ExtentMismatch {
                context: "zip",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data: Vec<f32> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    /// Mean of all entries, accumulated in f64.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation of all entries, accumulated in f64.
    pub fn std(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    /// Extract the `row`-th row of a rank-2 tensor.
    pub fn row(&self, row: usize) -> Result<Self, TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::BadRank {
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        if row >= rows {
            return Err(TensorError::RowOutOfRange { row, rows });
        }
        Tensor::new(&[cols], self.data[row * cols..(row + 1) * cols].to_vec())
    }

    /// Stack equal-length rank-1 tensors into a rank-2 tensor.
    pub fn from_rows(rows: &[Tensor]) -> Result<Self, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::Invalid("from_rows on empty slice".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ExtentMismatch {
                    context: "from_rows",
                    lhs: vec![cols],
                    rhs: r.shape.to_vec(),
                });
            }
            data.extend_from_slice(r.data());
        }
        Tensor::new(&[rows.len(), cols], data)
    }
}
