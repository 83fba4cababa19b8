//! Evaluation metrics: NMSE, global SSIM, Pearson correlation, aggregation.
//!
//! All statistics are accumulated in f64. SSIM is the single-formula global
//! variant (no sliding window) computed per channel and averaged, with
//! stabilizers c1 = 0.01^2 and c2 = 0.03^2; numbers are comparable only
//! within this implementation.

use crate::error::MetricError;
use crate::tensor::Tensor;

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::ShapeMismatch {
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Squared error normalized by the truth's squared norm:
/// `sum((y - yhat)^2) / sum(y^2)`.
pub fn nmse(truth: &Tensor, prediction: &Tensor) -> Result<f64, MetricError> {
    check_same_shape(truth, prediction)?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&y, &p) in truth.data().iter().zip(prediction.data().iter()) {
        let d = y as f64 - p as f64;
        num += d * d;
        den += y as f64 * y as f64;
    }
    if den == 0.0 {
        return Err(MetricError::ZeroTruth);
    }
    Ok(num / den)
}

fn ssim_channel(x: &[f32], y: &[f32]) -> f64 {
    let n = x.len() as f64;
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    for (&a, &b) in x.iter().zip(y.iter()) {
        sx += a as f64;
        sy += b as f64;
    }
    let mx = sx / n;
    let my = sy / n;
    let mut vx = 0.0f64;
    let mut vy = 0.0f64;
    let mut cov = 0.0f64;
    for (&a, &b) in x.iter().zip(y.iter()) {
        let da = a as f64 - mx;
        let db = b as f64 - my;
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Global SSIM. For rank-3 `[c, h, w]` inputs the per-channel values are
/// averaged; any other rank is treated as a single channel.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64, MetricError> {
    check_same_shape(x, y)?;
    if x.is_empty() {
        return Err(MetricError::Empty);
    }
    if x.shape().len() == 3 {
        let (c, hw) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
        let mut acc = 0.0f64;
        for ch in 0..c {
            acc += ssim_channel(
                &x.data()[ch * hw..(ch + 1) * hw],
                &y.data()[ch * hw..(ch + 1) * hw],
            );
        }
        Ok(acc / c as f64)
    } else {
        Ok(ssim_channel(x.data(), y.data()))
    }
}

/// Pearson correlation of two equal-length sequences.
pub fn pearson(a: &[f32], b: &[f32]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::ShapeMismatch {
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if a.len() < 2 {
        return Err(MetricError::TooFewValues { min: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut va = 0.0f64;
    let mut vb = 0.0f64;
    let mut cov = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x as f64 - ma;
        let dy = y as f64 - mb;
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// One metric value per (trajectory, time) cell.
#[derive(Clone, Debug, Default)]
pub struct MetricSeries {
    /// `rows[trajectory][time]`
    pub rows: Vec<Vec<f64>>,
}

impl MetricSeries {
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flatten().copied()
    }
}

/// Mean and population standard deviation pooled over time and trajectories.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub nmse: MetricSeries,
    pub ssim: MetricSeries,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

/// Flat pooling over all values, then mean / population std.
pub fn aggregate(values: impl Iterator<Item = f64>) -> Result<(f64, f64), MetricError> {
    let vals: Vec<f64> = values.collect();
    if vals.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Build a [`MetricReport`] from per-snapshot series.
pub fn report(nmse: MetricSeries, ssim: MetricSeries) -> Result<MetricReport, MetricError> {
    let (nm, ns) = aggregate(nmse.flat())?;
    let (sm, ss) = aggregate(ssim.flat())?;
    Ok(MetricReport {
        nmse,
        ssim,
        nmse_mean: nm,
        nmse_std: ns,
        ssim_mean: sm,
        ssim_std: ss,
    })
}
