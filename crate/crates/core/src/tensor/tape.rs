//! Tape-recorded eager execution with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the op record;
//! construction order is the topological order, so the backward pass is a
//! single reverse sweep. Gradients for leaves bound to a [`ParamStore`] are
//! additionally accumulated per [`ParamId`] (shared parameters sum).

use std::collections::HashMap;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::TensorError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Recorded operation. Fields reference parent nodes by [`Var`].
#[derive(Clone, Debug)]
pub enum Op {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var, f32),
    MulScalar(Var, f32),
    /// `[c,h,w] + [c]` broadcast over space.
    AddChan(Var, Var),
    /// `[c,h,w] * [c]` broadcast over space.
    MulChan(Var, Var),
    /// `[c,h,w] * [1,h,w]` broadcast over channels.
    MulSpatial(Var, Var),
    Silu(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f32),
    Conv2d(Var, Var),
    AvgPool2d(Var, usize),
    UpsampleBilinear(Var, usize, usize),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    GroupNorm { x: Var, gain: Var, shift: Var, groups: usize },
    Attention { q: Var, k: Var, v: Var },
    SoftmaxRows(Var),
    SumAll(Var),
    MeanAll(Var),
    /// `[c,h,w] -> [c]` mean over space.
    SpatialMean(Var),
    /// `[c,h,w] -> [c]` max over space.
    SpatialMax(Var),
    /// `[c,h,w] -> [1,h,w]` mean over channels.
    ChanMean(Var),
    /// `[c,h,w] -> [1,h,w]` max over channels.
    ChanMax(Var),
    ConcatChan(Var, Var),
    /// Concatenate along the last axis; leading extents must agree.
    ConcatLast(Var, Var),
    Reshape(Var),
    /// Differentiable row lookup into a `[rows, cols]` table.
    SelectRow { table: Var, row: usize },
    /// Stack rank-1 tensors of equal length into `[rows, cols]`.
    StackRows(Vec<Var>),
    /// `[r, c] -> [c, r]`.
    Transpose2d(Var),
    /// `[m] x [n] -> [m,n]` with `out[i,j] = a[i] + b[j]`.
    OuterSum(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to an arbitrary tape node (zero tensor if the
    /// node does not influence the loss).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
    }

    /// Gradient with respect to a parameter; `None` when the parameter is not
    /// on the path to the loss (treat as zero).
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn chw(shape: &[usize]) -> Result<(usize, usize, usize), TensorError> {
    if shape.len() != 3 {
        return Err(TensorError::BadRank {
            expected: 3,
            shape: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[1], shape[2]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a constant input (gradients still computed, not keyed).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// Leaf bound to a parameter; repeated leases return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf { param: Some(id) });
        self.param_vars.insert(id, v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ExtentMismatch {
                context,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a, s))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::MulScalar(a, s))
    }

    pub fn add_chan(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        if self.value(bias).shape() != [c] {
            return Err(TensorError::ExtentMismatch {
                context: "add_chan",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let bs = self.value(bias).data();
        let mut out = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                out[ch * h * w + i] = xs[ch * h * w + i] + bs[ch];
            }
        }
        let value = Tensor::new(&[c, h, w], out)?;
        Ok(self.push(value, Op::AddChan(x, bias)))
    }

    pub fn mul_chan(&mut self, x: Var, gate: Var) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        if self.value(gate).shape() != [c] {
            return Err(TensorError::ExtentMismatch {
                context: "mul_chan",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gate).shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let gs = self.value(gate).data();
        let mut out = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                out[ch * h * w + i] = xs[ch * h * w + i] * gs[ch];
            }
        }
        let value = Tensor::new(&[c, h, w], out)?;
        Ok(self.push(value, Op::MulChan(x, gate)))
    }

    pub fn mul_spatial(&mut self, x: Var, gate: Var) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        if self.value(gate).shape() != [1, h, w] {
            return Err(TensorError::ExtentMismatch {
                context: "mul_spatial",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gate).shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let gs = self.value(gate).data();
        let mut out = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                out[ch * h * w + i] = xs[ch * h * w + i] * gs[i];
            }
        }
        let value = Tensor::new(&[c, h, w], out)?;
        Ok(self.push(value, Op::MulSpatial(x, gate)))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid_f32(x));
        self.push(value, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid_f32);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        let value = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Cross-correlation with zero "same" padding; odd kernel extents.
    pub fn conv2d(&mut self, x: Var, kernel: Var) -> Result<Var, TensorError> {
        let (cin, h, w) = chw(self.value(x).shape())?;
        let ks = self.value(kernel).shape();
        if ks.len() != 4 {
            return Err(TensorError::BadRank {
                expected: 4,
                shape: ks.to_vec(),
            });
        }
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kcin != cin {
            return Err(TensorError::ExtentMismatch {
                context: "conv2d input channels",
                lhs: vec![cin],
                rhs: vec![kcin],
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::EvenKernel { kh, kw });
        }
        let out = kernels::conv2d_fwd(
            self.value(x).data(),
            self.value(kernel).data(),
            cin,
            h,
            w,
            cout,
            kh,
            kw,
        );
        let value = Tensor::new(&[cout, h, w], out)?;
        Ok(self.push(value, Op::Conv2d(x, kernel)))
    }

    pub fn avg_pool2d(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(TensorError::NonDivisiblePool { factor, h, w });
        }
        let out = kernels::avg_pool2d_fwd(self.value(x).data(), c, h, w, factor);
        let value = Tensor::new(&[c, h / factor, w / factor], out)?;
        Ok(self.push(value, Op::AvgPool2d(x, factor)))
    }

    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::ZeroExtent {
                shape: vec![c, out_h, out_w],
            });
        }
        if out_h < h || out_w < w {
            return Err(TensorError::DownscaleTarget { out_h, out_w, h, w });
        }
        let out = kernels::upsample_bilinear_fwd(self.value(x).data(), c, h, w, out_h, out_w);
        let value = Tensor::new(&[c, out_h, out_w], out)?;
        Ok(self.push(value, Op::UpsampleBilinear(x, out_h, out_w)))
    }

    /// Affine map over the last axis: `[.., din] -> [.., dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 2 {
            return Err(TensorError::BadRank {
                expected: 2,
                shape: ws,
            });
        }
        let (dout, din) = (ws[0], ws[1]);
        let last = *xs.last().ok_or(TensorError::BadRank {
            expected: 1,
            shape: xs.clone(),
        })?;
        if last != din {
            return Err(TensorError::ExtentMismatch {
                context: "linear trailing extent",
                lhs: xs,
                rhs: ws,
            });
        }
        if let Some(bias) = b {
            if self.value(bias).shape() != [dout] {
                return Err(TensorError::ExtentMismatch {
                    context: "linear bias",
                    lhs: vec![dout],
                    rhs: self.value(bias).shape().to_vec(),
                });
            }
        }
        let batch = self.value(x).len() / din;
        let out = kernels::linear_fwd(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|bias| self.value(bias).data()),
            batch,
            din,
            dout,
        );
        let mut out_shape = self.value(x).shape().to_vec();
        *out_shape.last_mut().unwrap() = dout;
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let asp = self.value(a).shape().to_vec();
        let bsp = self.value(b).shape().to_vec();
        if asp.len() != 2 || bsp.len() != 2 || asp[1] != bsp[0] {
            return Err(TensorError::ExtentMismatch {
                context: "matmul",
                lhs: asp,
                rhs: bsp,
            });
        }
        let (m, k, n) = (asp[0], asp[1], bsp[1]);
        let out = kernels::matmul_fwd(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        groups: usize,
    ) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::BadGroupCount { groups, channels: c });
        }
        if self.value(gain).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(TensorError::ExtentMismatch {
                context: "group_norm affine",
                lhs: vec![c],
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let out = kernels::group_norm_fwd(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(shift).data(),
            c,
            h * w,
            groups,
        );
        let value = Tensor::new(&[c, h, w], out)?;
        Ok(self.push(value, Op::GroupNorm { x, gain, shift, groups }))
    }

    /// softmax(Q K^T / sqrt(dk)) V with rows over keys.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, TensorError> {
        let qs = self.value(q).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        let vs = self.value(v).shape().to_vec();
        if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
            return Err(TensorError::BadRank {
                expected: 2,
                shape: qs,
            });
        }
        if qs[1] != ks[1] || ks[0] != vs[0] {
            return Err(TensorError::ExtentMismatch {
                context: "attention",
                lhs: qs,
                rhs: ks,
            });
        }
        let (nq, dk) = (qs[0], qs[1]);
        let (nk, dv) = (vs[0], vs[1]);
        let out = kernels::attention_fwd(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            nq,
            nk,
            dk,
            dv,
        );
        let value = Tensor::new(&[nq, dv], out)?;
        Ok(self.push(value, Op::Attention { q, k, v }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 {
            return Err(TensorError::BadRank { expected: 2, shape: s });
        }
        let out = kernels::softmax_rows_fwd(self.value(x).data(), s[0], s[1]);
        let value = Tensor::new(&s, out)?;
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar((s / n as f64) as f32), Op::MeanAll(x))
    }

    pub fn spatial_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        let xs = self.value(x).data();
        let mut out = vec![0.0f32; c];
        for ch in 0..c {
            let mut acc = 0.0f64;
            for i in 0..h * w {
                acc += xs[ch * h * w + i] as f64;
            }
            out[ch] = (acc / (h * w) as f64) as f32;
        }
        let value = Tensor::new(&[c], out)?;
        Ok(self.push(value, Op::SpatialMean(x)))
    }

    pub fn spatial_max(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        let xs = self.value(x).data();
        let mut out = vec![0.0f32; c];
        for ch in 0..c {
            out[ch] = xs[ch * h * w..(ch + 1) * h * w]
                .iter()
                .fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        }
        let value = Tensor::new(&[c], out)?;
        Ok(self.push(value, Op::SpatialMax(x)))
    }

    pub fn chan_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        let xs = self.value(x).data();
        let mut out = vec![0.0f32; h * w];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for ch in 0..c {
                acc += xs[ch * h * w + i] as f64;
            }
            *slot = (acc / c as f64) as f32;
        }
        let value = Tensor::new(&[1, h, w], out)?;
        Ok(self.push(value, Op::ChanMean(x)))
    }

    pub fn chan_max(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, h, w) = chw(self.value(x).shape())?;
        let xs = self.value(x).data();
        let mut out = vec![f32::NEG_INFINITY; h * w];
        for (i, slot) in out.iter_mut().enumerate() {
            for ch in 0..c {
                *slot = slot.max(xs[ch * h * w + i]);
            }
        }
        let value = Tensor::new(&[1, h, w], out)?;
        Ok(self.push(value, Op::ChanMax(x)))
    }

    pub fn concat_chan(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ca, h, w) = chw(self.value(a).shape())?;
        let (cb, hb, wb) = chw(self.value(b).shape())?;
        if h != hb || w != wb {
            return Err(TensorError::ExtentMismatch {
                context: "concat_chan",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity((ca + cb) * h * w);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let value = Tensor::new(&[ca + cb, h, w], out)?;
        Ok(self.push(value, Op::ConcatChan(a, b)))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let asp = self.value(a).shape().to_vec();
        let bsp = self.value(b).shape().to_vec();
        if asp.len() != bsp.len() || asp.is_empty() || asp[..asp.len() - 1] != bsp[..bsp.len() - 1]
        {
            return Err(TensorError::ExtentMismatch {
                context: "concat_last",
                lhs: asp,
                rhs: bsp,
            });
        }
        let (la, lb) = (asp[asp.len() - 1], bsp[bsp.len() - 1]);
        let rows = self.value(a).len() / la;
        let mut out = Vec::with_capacity(rows * (la + lb));
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for r in 0..rows {
            out.extend_from_slice(&ad[r * la..(r + 1) * la]);
            out.extend_from_slice(&bd[r * lb..(r + 1) * lb]);
        }
        let mut shape = asp;
        *shape.last_mut().unwrap() = la + lb;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::ConcatLast(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn select_row(&mut self, table: Var, row: usize) -> Result<Var, TensorError> {
        let value = self.value(table).row(row)?;
        Ok(self.push(value, Op::SelectRow { table, row }))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::Invalid("stack_rows on empty slice".into()));
        }
        let cols = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let t = self.value(r);
            if t.shape().len() != 1 || t.len() != cols {
                return Err(TensorError::ExtentMismatch {
                    context: "stack_rows",
                    lhs: vec![cols],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(&[rows.len(), cols], data)?;
        Ok(self.push(value, Op::StackRows(rows.to_vec())))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 {
            return Err(TensorError::BadRank { expected: 2, shape: s });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], out)?;
        Ok(self.push(value, Op::Transpose2d(x)))
    }

    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let asp = self.value(a).shape().to_vec();
        let bsp = self.value(b).shape().to_vec();
        if asp.len() != 1 || bsp.len() != 1 {
            return Err(TensorError::BadRank {
                expected: 1,
                shape: asp,
            });
        }
        let (m, n) = (asp[0], bsp[0]);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = ad[i] + bd[j];
            }
        }
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::OuterSum(a, b)))
    }

    /// Mean squared error between two same-shape vars (scalar output).
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Reverse sweep from a scalar loss. Returns per-node and per-parameter
    /// gradients; parameters off the path are simply absent (zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let loss_val = self.value(loss);
        if !loss_val.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.accumulate_parents(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }

        let mut by_node = Vec::with_capacity(self.nodes.len());
        let mut by_param: HashMap<ParamId, Tensor> = HashMap::new();
        for (idx, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[idx];
            let tensor = match g {
                Some(v) => Some(Tensor::new(node.value.shape(), v)?),
                None => None,
            };
            if let (Op::Leaf { param: Some(id) }, Some(t)) = (&node.op, tensor.as_ref()) {
                by_param
                    .entry(*id)
                    .and_modify(|acc| *acc = acc.zip(t, |a, b| a + b).expect("param grad shape"))
                    .or_insert_with(|| t.clone());
            }
            by_node.push(tensor);
        }
        Ok(Gradients { by_node, by_param })
    }

    fn add_into(grads: &mut [Option<Vec<f32>>], target: Var, len: usize, add: impl Fn(&mut [f32])) {
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0f32; len]);
        add(slot);
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate_parents(&self, idx: usize, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let nlen = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *b, nlen(*b), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o += g;
                    }
                });
            }
            Op::Sub(a, b) => {
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *b, nlen(*b), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o -= g;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for ((o, g), bv) in s.iter_mut().zip(gout).zip(bv.iter()) {
                        *o += g * bv;
                    }
                });
                Self::add_into(grads, *b, nlen(*b), |s| {
                    for ((o, g), av) in s.iter_mut().zip(gout).zip(av.iter()) {
                        *o += g * av;
                    }
                });
            }
            Op::AddScalar(a, _) => {
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o += g;
                    }
                });
            }
            Op::MulScalar(a, c) => {
                let c = *c;
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o += g * c;
                    }
                });
            }
            Op::AddChan(x, bias) => {
                let shape = self.nodes[x.0].value.shape();
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *bias, c, |s| {
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for i in 0..hw {
                            acc += gout[ch * hw + i] as f64;
                        }
                        s[ch] += acc as f32;
                    }
                });
            }
            Op::MulChan(x, gate) => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                let xv = val(*x).to_vec();
                let gv = val(*gate).to_vec();
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for ch in 0..c {
                        for i in 0..hw {
                            s[ch * hw + i] += gout[ch * hw + i] * gv[ch];
                        }
                    }
                });
                Self::add_into(grads, *gate, c, |s| {
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for i in 0..hw {
                            acc += gout[ch * hw + i] as f64 * xv[ch * hw + i] as f64;
                        }
                        s[ch] += acc as f32;
                    }
                });
            }
            Op::MulSpatial(x, gate) => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                let xv = val(*x).to_vec();
                let gv = val(*gate).to_vec();
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for ch in 0..c {
                        for i in 0..hw {
                            s[ch * hw + i] += gout[ch * hw + i] * gv[i];
                        }
                    }
                });
                Self::add_into(grads, *gate, hw, |s| {
                    for (i, slot) in s.iter_mut().enumerate() {
                        let mut acc = 0.0f64;
                        for ch in 0..c {
                            acc += gout[ch * hw + i] as f64 * xv[ch * hw + i] as f64;
                        }
                        *slot += acc as f32;
                    }
                });
            }
            Op::Silu(a) => {
                let av = val(*a).to_vec();
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for ((o, g), &x) in s.iter_mut().zip(gout).zip(av.iter()) {
                        let sg = sigmoid_f32(x);
                        *o += g * (sg * (1.0 + x * (1.0 - sg)));
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = node.value.data().to_vec();
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for ((o, g), &y) in s.iter_mut().zip(gout).zip(yv.iter()) {
                        *o += g * y * (1.0 - y);
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let av = val(*a).to_vec();
                let slope = *slope;
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for ((o, g), &x) in s.iter_mut().zip(gout).zip(av.iter()) {
                        *o += g * if x >= 0.0 { 1.0 } else { slope };
                    }
                });
            }
            Op::Conv2d(x, k) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let ks = self.nodes[k.0].value.shape().to_vec();
                let (dx, dk) = kernels::conv2d_bwd(
                    gout,
                    val(*x),
                    val(*k),
                    xs[0],
                    xs[1],
                    xs[2],
                    ks[0],
                    ks[2],
                    ks[3],
                );
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for (o, g) in s.iter_mut().zip(dx.iter()) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *k, nlen(*k), |s| {
                    for (o, g) in s.iter_mut().zip(dk.iter()) {
                        *o += g;
                    }
                });
            }
            Op::AvgPool2d(x, f) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let dx = kernels::avg_pool2d_bwd(gout, xs[0], xs[1], xs[2], *f);
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for (o, g) in s.iter_mut().zip(dx.iter()) {
                        *o += g;
                    }
                });
            }
            Op::UpsampleBilinear(x, oh, ow) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let dx = kernels::upsample_bilinear_bwd(gout, xs[0], xs[1], xs[2], *oh, *ow);
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for (o, g) in s.iter_mut().zip(dx.iter()) {
                        *o += g;
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let ws = self.nodes[w.0].value.shape().to_vec();
                let (dout, din) = (ws[0], ws[1]);
                let batch = nlen(*x) / din;
                let (dx, dw, db) =
                    kernels::linear_bwd(gout, val(*x), val(*w), batch, din, dout, b.is_some());
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for (o, g) in s.iter_mut().zip(dx.iter()) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *w, nlen(*w), |s| {
                    for (o, g) in s.iter_mut().zip(dw.iter()) {
                        *o += g;
                    }
                });
                if let (Some(bias), Some(db)) = (b, db) {
                    Self::add_into(grads, *bias, nlen(*bias), |s| {
                        for (o, g) in s.iter_mut().zip(db.iter()) {
                            *o += g;
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let asp = self.nodes[a.0].value.shape().to_vec();
                let bsp = self.nodes[b.0].value.shape().to_vec();
                let (da, db) =
                    kernels::matmul_bwd(gout, val(*a), val(*b), asp[0], asp[1], bsp[1]);
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for (o, g) in s.iter_mut().zip(da.iter()) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *b, nlen(*b), |s| {
                    for (o, g) in s.iter_mut().zip(db.iter()) {
                        *o += g;
                    }
                });
            }
            Op::GroupNorm { x, gain, shift, groups } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                let (dx, dg, dsh) =
                    kernels::group_norm_bwd(gout, val(*x), val(*gain), c, hw, *groups);
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for (o, g) in s.iter_mut().zip(dx.iter()) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *gain, c, |s| {
                    for (o, g) in s.iter_mut().zip(dg.iter()) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *shift, c, |s| {
                    for (o, g) in s.iter_mut().zip(dsh.iter()) {
                        *o += g;
                    }
                });
            }
            Op::Attention { q, k, v } => {
                let qs = self.nodes[q.0].value.shape().to_vec();
                let vs = self.nodes[v.0].value.shape().to_vec();
                let (nq, dk) = (qs[0], qs[1]);
                let (nk, dv) = (vs[0], vs[1]);
                let (dq, dkk, dvv) =
                    kernels::attention_bwd(gout, val(*q), val(*k), val(*v), nq, nk, dk, dv);
                Self::add_into(grads, *q, nlen(*q), |s| {
                    for (o, g) in s.iter_mut().zip(dq.iter()) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *k, nlen(*k), |s| {
                    for (o, g) in s.iter_mut().zip(dkk.iter()) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *v, nlen(*v), |s| {
                    for (o, g) in s.iter_mut().zip(dvv.iter()) {
                        *o += g;
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let s = node.value.shape().to_vec();
                let dx = kernels::softmax_rows_bwd(gout, node.value.data(), s[0], s[1]);
                Self::add_into(grads, *x, nlen(*x), |sl| {
                    for (o, g) in sl.iter_mut().zip(dx.iter()) {
                        *o += g;
                    }
                });
            }
            Op::SumAll(x) => {
                let g = gout[0];
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for o in s.iter_mut() {
                        *o += g;
                    }
                });
            }
            Op::MeanAll(x) => {
                let g = gout[0] / nlen(*x).max(1) as f32;
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for o in s.iter_mut() {
                        *o += g;
                    }
                });
            }
            Op::SpatialMean(x) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for ch in 0..c {
                        let g = gout[ch] / hw as f32;
                        for i in 0..hw {
                            s[ch * hw + i] += g;
                        }
                    }
                });
            }
            Op::SpatialMax(x) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                let xv = val(*x).to_vec();
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for ch in 0..c {
                        // first index attaining the max wins (deterministic)
                        let mut best = 0usize;
                        for i in 1..hw {
                            if xv[ch * hw + i] > xv[ch * hw + best] {
                                best = i;
                            }
                        }
                        s[ch * hw + best] += gout[ch];
                    }
                });
            }
            Op::ChanMean(x) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for ch in 0..c {
                        for i in 0..hw {
                            s[ch * hw + i] += gout[i] / c as f32;
                        }
                    }
                });
            }
            Op::ChanMax(x) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                let xv = val(*x).to_vec();
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for i in 0..hw {
                        let mut best = 0usize;
                        for ch in 1..c {
                            if xv[ch * hw + i] > xv[best * hw + i] {
                                best = ch;
                            }
                        }
                        s[best * hw + i] += gout[i];
                    }
                });
            }
            Op::ConcatChan(a, b) => {
                let na = nlen(*a);
                Self::add_into(grads, *a, na, |s| {
                    for (o, g) in s.iter_mut().zip(&gout[..na]) {
                        *o += g;
                    }
                });
                Self::add_into(grads, *b, nlen(*b), |s| {
                    for (o, g) in s.iter_mut().zip(&gout[na..]) {
                        *o += g;
                    }
                });
            }
            Op::ConcatLast(a, b) => {
                let asp = self.nodes[a.0].value.shape().to_vec();
                let bsp = self.nodes[b.0].value.shape().to_vec();
                let (la, lb) = (asp[asp.len() - 1], bsp[bsp.len() - 1]);
                let rows = nlen(*a) / la;
                Self::add_into(grads, *a, nlen(*a), |s| {
                    for r in 0..rows {
                        for i in 0..la {
                            s[r * la + i] += gout[r * (la + lb) + i];
                        }
                    }
                });
                Self::add_into(grads, *b, nlen(*b), |s| {
                    for r in 0..rows {
                        for i in 0..lb {
                            s[r * lb + i] += gout[r * (la + lb) + la + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for (o, g) in s.iter_mut().zip(gout) {
                        *o += g;
                    }
                });
            }
            Op::SelectRow { table, row } => {
                let cols = node.value.len();
                let row = *row;
                Self::add_into(grads, *table, nlen(*table), |s| {
                    for (o, g) in s[row * cols..(row + 1) * cols].iter_mut().zip(gout) {
                        *o += g;
                    }
                });
            }
            Op::StackRows(rows) => {
                let cols = if rows.is_empty() { 0 } else { nlen(rows[0]) };
                for (r, var) in rows.iter().enumerate() {
                    Self::add_into(grads, *var, cols, |s| {
                        for (o, g) in s.iter_mut().zip(&gout[r * cols..(r + 1) * cols]) {
                            *o += g;
                        }
                    });
                }
            }
            Op::Transpose2d(x) => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (r, c) = (xs[0], xs[1]);
                Self::add_into(grads, *x, nlen(*x), |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += gout[j * r + i];
                        }
                    }
                });
            }
            Op::OuterSum(a, b) => {
                let (m, n) = (nlen(*a), nlen(*b));
                Self::add_into(grads, *a, m, |s| {
                    for (i, slot) in s.iter_mut().enumerate() {
                        let mut acc = 0.0f64;
                        for j in 0..n {
                            acc += gout[i * n + j] as f64;
                        }
                        *slot += acc as f32;
                    }
                });
                Self::add_into(grads, *b, n, |s| {
                    for (j, slot) in s.iter_mut().enumerate() {
                        let mut acc = 0.0f64;
                        for i in 0..m {
                            acc += gout[i * n + j] as f64;
                        }
                        *slot += acc as f32;
                    }
                });
            }
        }
    }
}

fn sigmoid_f32(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
