//! Forward and backward kernels behind the tape operations.
//!
//! Plain loops over row-major slices, fixed iteration order, f64 accumulators
//! for every dot product and reduction. No parallelism: results must be
//! bit-identical across runs.

pub const GROUP_NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with zero "same" padding, odd kernels.
// x: [cin, h, w], k: [cout, cin, kh, kw] -> [cout, h, w]
// ---------------------------------------------------------------------------

pub fn conv2d_fwd(
    x: &[f32],
    k: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<f32> {
    let ph = kh / 2;
    let pw = kw / 2;
    let mut out = vec![0.0f32; cout * h * w];
    for co in 0..cout {
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0f64;
                for ci in 0..cin {
                    let xbase = ci * h * w;
                    let kbase = (co * cin + ci) * kh * kw;
                    for dy in 0..kh {
                        let iy = oy as isize + dy as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * w;
                        let krow = kbase + dy * kw;
                        for dx in 0..kw {
                            let ix = ox as isize + dx as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += x[xrow + ix as usize] as f64 * k[krow + dx] as f64;
                        }
                    }
                }
                out[(co * h + oy) * w + ox] = acc as f32;
            }
        }
    }
    out
}

pub fn conv2d_bwd(
    grad: &[f32],
    x: &[f32],
    k: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> (Vec<f32>, Vec<f32>) {
    let ph = kh / 2;
    let pw = kw / 2;
    // dX[ci, iy, ix] = sum over (co, dy, dx) of grad[co, iy - dy + ph, ix - dx + pw] * k[co, ci, dy, dx]
    let mut dx_out = vec![0.0f32; cin * h * w];
    for ci in 0..cin {
        for iy in 0..h {
            for ix in 0..w {
                let mut acc = 0.0f64;
                for co in 0..cout {
                    let gbase = co * h * w;
                    let kbase = (co * cin + ci) * kh * kw;
                    for dy in 0..kh {
                        let oy = iy as isize - dy as isize + ph as isize;
                        if oy < 0 || oy >= h as isize {
                            continue;
                        }
                        let grow = gbase + oy as usize * w;
                        let krow = kbase + dy * kw;
                        for dxk in 0..kw {
                            let ox = ix as isize - dxk as isize + pw as isize;
                            if ox < 0 || ox >= w as isize {
                                continue;
                            }
                            acc += grad[grow + ox as usize] as f64 * k[krow + dxk] as f64;
                        }
                    }
                }
                dx_out[(ci * h + iy) * w + ix] = acc as f32;
            }
        }
    }
    // dK[co, ci, dy, dx] = sum over (oy, ox) of grad[co, oy, ox] * x[ci, oy + dy - ph, ox + dx - pw]
    let mut dk_out = vec![0.0f32; cout * cin * kh * kw];
    for co in 0..cout {
        for ci in 0..cin {
            for dy in 0..kh {
                for dxk in 0..kw {
                    let mut acc = 0.0f64;
                    for oy in 0..h {
                        let iy = oy as isize + dy as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let grow = co * h * w + oy * w;
                        let xrow = ci * h * w + iy as usize * w;
                        for ox in 0..w {
                            let ix = ox as isize + dxk as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += grad[grow + ox] as f64 * x[xrow + ix as usize] as f64;
                        }
                    }
                    dk_out[((co * cin + ci) * kh + dy) * kw + dxk] = acc as f32;
                }
            }
        }
    }
    (dx_out, dk_out)
}

// ---------------------------------------------------------------------------
// avg_pool2d: factor must divide both extents. [c, h, w] -> [c, h/f, w/f]
// ---------------------------------------------------------------------------

pub fn avg_pool2d_fwd(x: &[f32], c: usize, h: usize, w: usize, f: usize) -> Vec<f32> {
    let oh = h / f;
    let ow = w / f;
    let inv = 1.0f64 / (f * f) as f64;
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for dy in 0..f {
                    let row = (ch * h + oy * f + dy) * w + ox * f;
                    for dx in 0..f {
                        acc += x[row + dx] as f64;
                    }
                }
                out[(ch * oh + oy) * ow + ox] = (acc * inv) as f32;
            }
        }
    }
    out
}

pub fn avg_pool2d_bwd(grad: &[f32], c: usize, h: usize, w: usize, f: usize) -> Vec<f32> {
    let oh = h / f;
    let ow = w / f;
    let inv = 1.0f32 / (f * f) as f32;
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for iy in 0..h {
            let oy = iy / f;
            for ix in 0..w {
                let ox = ix / f;
                out[(ch * h + iy) * w + ix] = grad[(ch * oh + oy) * ow + ox] * inv;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Bilinear upsampling with half-pixel centers: in = (out + 0.5) * (in/out) - 0.5,
// clamped to the valid range. Exact identity when sizes are unchanged.
// ---------------------------------------------------------------------------

/// (lower index, upper index, weight of upper) for one output coordinate.
fn bilinear_axis(out_i: usize, in_n: usize, out_n: usize) -> (usize, usize, f64) {
    let scale = in_n as f64 / out_n as f64;
    let pos = (out_i as f64 + 0.5) * scale - 0.5;
    let pos = pos.clamp(0.0, (in_n - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(in_n - 1);
    (lo, hi, pos - lo as f64)
}

pub fn upsample_bilinear_fwd(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; c * oh * ow];
    for oy in 0..oh {
        let (y0, y1, ty) = bilinear_axis(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, tx) = bilinear_axis(ox, w, ow);
            for ch in 0..c {
                let base = ch * h * w;
                let v00 = x[base + y0 * w + x0] as f64;
                let v01 = x[base + y0 * w + x1] as f64;
                let v10 = x[base + y1 * w + x0] as f64;
                let v11 = x[base + y1 * w + x1] as f64;
                let top = v00 * (1.0 - tx) + v01 * tx;
                let bot = v10 * (1.0 - tx) + v11 * tx;
                out[(ch * oh + oy) * ow + ox] = (top * (1.0 - ty) + bot * ty) as f32;
            }
        }
    }
    out
}

pub fn upsample_bilinear_bwd(
    grad: &[f32],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; c * h * w];
    for oy in 0..oh {
        let (y0, y1, ty) = bilinear_axis(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, tx) = bilinear_axis(ox, w, ow);
            for ch in 0..c {
                let g = grad[(ch * oh + oy) * ow + ox] as f64;
                let base = ch * h * w;
                out[base + y0 * w + x0] += (g * (1.0 - ty) * (1.0 - tx)) as f32;
                out[base + y0 * w + x1] += (g * (1.0 - ty) * tx) as f32;
                out[base + y1 * w + x0] += (g * ty * (1.0 - tx)) as f32;
                out[base + y1 * w + x1] += (g * ty * tx) as f32;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// linear: x [batch, din] * w [dout, din]^T + b -> [batch, dout]
// ---------------------------------------------------------------------------

pub fn linear_fwd(
    x: &[f32],
    w: &[f32],
    b: Option<&[f32]>,
    batch: usize,
    din: usize,
    dout: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; batch * dout];
    for bi in 0..batch {
        let xrow = &x[bi * din..(bi + 1) * din];
        for o in 0..dout {
            let wrow = &w[o * din..(o + 1) * din];
            let mut acc = match b {
                Some(bias) => bias[o] as f64,
                None => 0.0,
            };
            for i in 0..din {
                acc += xrow[i] as f64 * wrow[i] as f64;
            }
            out[bi * dout + o] = acc as f32;
        }
    }
    out
}

pub fn linear_bwd(
    grad: &[f32],
    x: &[f32],
    w: &[f32],
    batch: usize,
    din: usize,
    dout: usize,
    with_bias: bool,
) -> (Vec<f32>, Vec<f32>, Option<Vec<f32>>) {
    let mut dx = vec![0.0f32; batch * din];
    for bi in 0..batch {
        let grow = &grad[bi * dout..(bi + 1) * dout];
        for i in 0..din {
            let mut acc = 0.0f64;
            for o in 0..dout {
                acc += grow[o] as f64 * w[o * din + i] as f64;
            }
            dx[bi * din + i] = acc as f32;
        }
    }
    let mut dw = vec![0.0f32; dout * din];
    for o in 0..dout {
        for i in 0..din {
            let mut acc = 0.0f64;
            for bi in 0..batch {
                acc += grad[bi * dout + o] as f64 * x[bi * din + i] as f64;
            }
            dw[o * din + i] = acc as f32;
        }
    }
    let db = with_bias.then(|| {
        let mut db = vec![0.0f32; dout];
        for o in 0..dout {
            let mut acc = 0.0f64;
            for bi in 0..batch {
                acc += grad[bi * dout + o] as f64;
            }
            db[o] = acc as f32;
        }
        db
    });
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// matmul: a [m, k] * b [k, n] -> [m, n]
// ---------------------------------------------------------------------------

pub fn matmul_fwd(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for l in 0..k {
                acc += a[i * k + l] as f64 * b[l * n + j] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    out
}

pub fn matmul_bwd(
    grad: &[f32],
    a: &[f32],
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f32>, Vec<f32>) {
    // dA = grad * B^T, dB = A^T * grad
    let mut da = vec![0.0f32; m * k];
    for i in 0..m {
        for l in 0..k {
            let mut acc = 0.0f64;
            for j in 0..n {
                acc += grad[i * n + j] as f64 * b[l * n + j] as f64;
            }
            da[i * k + l] = acc as f32;
        }
    }
    let mut db = vec![0.0f32; k * n];
    for l in 0..k {
        for j in 0..n {
            let mut acc = 0.0f64;
            for i in 0..m {
                acc += a[i * k + l] as f64 * grad[i * n + j] as f64;
            }
            db[l * n + j] = acc as f32;
        }
    }
    (da, db)
}

// ---------------------------------------------------------------------------
// group_norm over [c, h, w]: per-group zero mean / unit variance, then affine.
// ---------------------------------------------------------------------------

pub struct GroupStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn group_stats(x: &[f32], c: usize, hw: usize, groups: usize) -> GroupStats {
    let per = c / groups;
    let m = (per * hw) as f64;
    let mut mean = vec![0.0f64; groups];
    let mut inv_std = vec![0.0f64; groups];
    for g in 0..groups {
        let lo = g * per * hw;
        let hi = (g + 1) * per * hw;
        let mut sum = 0.0f64;
        for &v in &x[lo..hi] {
            sum += v as f64;
        }
        let mu = sum / m;
        let mut var = 0.0f64;
        for &v in &x[lo..hi] {
            let d = v as f64 - mu;
            var += d * d;
        }
        var /= m;
        mean[g] = mu;
        inv_std[g] = 1.0 / (var + GROUP_NORM_EPS).sqrt();
    }
    GroupStats { mean, inv_std }
}

pub fn group_norm_fwd(
    x: &[f32],
    gain: &[f32],
    shift: &[f32],
    c: usize,
    hw: usize,
    groups: usize,
) -> Vec<f32> {
    let per = c / groups;
    let stats = group_stats(x, c, hw, groups);
    let mut out = vec![0.0f32; c * hw];
    for ch in 0..c {
        let g = ch / per;
        let (mu, is) = (stats.mean[g], stats.inv_std[g]);
        let (gn, sh) = (gain[ch] as f64, shift[ch] as f64);
        for i in 0..hw {
            let xhat = (x[ch * hw + i] as f64 - mu) * is;
            out[ch * hw + i] = (gn * xhat + sh) as f32;
        }
    }
    out
}

pub fn group_norm_bwd(
    grad: &[f32],
    x: &[f32],
    gain: &[f32],
    c: usize,
    hw: usize,
    groups: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let per = c / groups;
    let m = (per * hw) as f64;
    let stats = group_stats(x, c, hw, groups);
    let mut dx = vec![0.0f32; c * hw];
    let mut dgain = vec![0.0f32; c];
    let mut dshift = vec![0.0f32; c];
    for ch in 0..c {
        let g = ch / per;
        let (mu, is) = (stats.mean[g], stats.inv_std[g]);
        let mut acc_g = 0.0f64;
        let mut acc_s = 0.0f64;
        for i in 0..hw {
            let xhat = (x[ch * hw + i] as f64 - mu) * is;
            acc_g += grad[ch * hw + i] as f64 * xhat;
            acc_s += grad[ch * hw + i] as f64;
        }
        dgain[ch] = acc_g as f32;
        dshift[ch] = acc_s as f32;
    }
    // dx = inv_std / m * (m * gy_hat - sum(gy_hat) - xhat * sum(gy_hat * xhat)),
    // with gy_hat = grad * gain, sums taken per group.
    for g in 0..groups {
        let (mu, is) = (stats.mean[g], stats.inv_std[g]);
        let mut sum_gy = 0.0f64;
        let mut sum_gy_xhat = 0.0f64;
        for ch in g * per..(g + 1) * per {
            let gn = gain[ch] as f64;
            for i in 0..hw {
                let gy = grad[ch * hw + i] as f64 * gn;
                let xhat = (x[ch * hw + i] as f64 - mu) * is;
                sum_gy += gy;
                sum_gy_xhat += gy * xhat;
            }
        }
        for ch in g * per..(g + 1) * per {
            let gn = gain[ch] as f64;
            for i in 0..hw {
                let gy = grad[ch * hw + i] as f64 * gn;
                let xhat = (x[ch * hw + i] as f64 - mu) * is;
                let v = is / m * (m * gy - sum_gy - xhat * sum_gy_xhat);
                dx[ch * hw + i] = v as f32;
            }
        }
    }
    (dx, dgain, dshift)
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention: q [nq, dk], k [nk, dk], v [nk, dv] -> [nq, dv]
// Probabilities recomputed in backward (f64) rather than cached.
// ---------------------------------------------------------------------------

pub fn attention_probs(q: &[f32], k: &[f32], nq: usize, nk: usize, dk: usize) -> Vec<f64> {
    let scale = 1.0 / (dk as f64).sqrt();
    let mut probs = vec![0.0f64; nq * nk];
    for i in 0..nq {
        let row = &mut probs[i * nk..(i + 1) * nk];
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for l in 0..dk {
                acc += q[i * dk + l] as f64 * k[j * dk + l] as f64;
            }
            let s = acc * scale;
            *slot = s;
            if s > max {
                max = s;
            }
        }
        let mut sum = 0.0f64;
        for slot in row.iter_mut() {
            *slot = (*slot - max).exp();
            sum += *slot;
        }
        for slot in row.iter_mut() {
            *slot /= sum;
        }
    }
    probs
}

pub fn attention_fwd(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    nq: usize,
    nk: usize,
    dk: usize,
    dv: usize,
) -> Vec<f32> {
    let probs = attention_probs(q, k, nq, nk, dk);
    let mut out = vec![0.0f32; nq * dv];
    for i in 0..nq {
        for d in 0..dv {
            let mut acc = 0.0f64;
            for j in 0..nk {
                acc += probs[i * nk + j] * v[j * dv + d] as f64;
            }
            out[i * dv + d] = acc as f32;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn attention_bwd(
    grad: &[f32],
    q: &[f32],
    k: &[f32],
    v: &[f32],
    nq: usize,
    nk: usize,
    dk: usize,
    dv: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let scale = 1.0 / (dk as f64).sqrt();
    let probs = attention_probs(q, k, nq, nk, dk);
    // dV = P^T * grad
    let mut dv_out = vec![0.0f32; nk * dv];
    for j in 0..nk {
        for d in 0..dv {
            let mut acc = 0.0f64;
            for i in 0..nq {
                acc += probs[i * nk + j] * grad[i * dv + d] as f64;
            }
            dv_out[j * dv + d] = acc as f32;
        }
    }
    // dP[i,j] = grad[i,:] . v[j,:], then softmax backward to dS.
    let mut dq = vec![0.0f32; nq * dk];
    let mut dk_out = vec![0.0f32; nk * dk];
    let mut ds_row = vec![0.0f64; nk];
    for i in 0..nq {
        let mut dot = 0.0f64; // sum_j dP[i,j] * P[i,j]
        for (j, slot) in ds_row.iter_mut().enumerate() {
            let mut dp = 0.0f64;
            for d in 0..dv {
                dp += grad[i * dv + d] as f64 * v[j * dv + d] as f64;
            }
            *slot = dp;
            dot += dp * probs[i * nk + j];
        }
        for (j, slot) in ds_row.iter_mut().enumerate() {
            *slot = probs[i * nk + j] * (*slot - dot) * scale;
        }
        for l in 0..dk {
            let mut acc = 0.0f64;
            for (j, ds) in ds_row.iter().enumerate() {
                acc += ds * k[j * dk + l] as f64;
            }
            dq[i * dk + l] = acc as f32;
        }
        for (j, ds) in ds_row.iter().enumerate() {
            for l in 0..dk {
                dk_out[j * dk + l] += (ds * q[i * dk + l] as f64) as f32;
            }
        }
    }
    (dq, dk_out, dv_out)
}

// ---------------------------------------------------------------------------
// Row softmax over [rows, cols].
// ---------------------------------------------------------------------------

pub fn softmax_rows_fwd(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let mut sum = 0.0f64;
        let mut ex = vec![0.0f64; cols];
        for (e, &v) in ex.iter_mut().zip(row.iter()) {
            *e = (v as f64 - max).exp();
            sum += *e;
        }
        for (o, e) in out[r * cols..(r + 1) * cols].iter_mut().zip(ex.iter()) {
            *o = (e / sum) as f32;
        }
    }
    out
}

pub fn softmax_rows_bwd(grad: &[f32], y: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let mut dot = 0.0f64;
        for c in 0..cols {
            dot += grad[r * cols + c] as f64 * y[r * cols + c] as f64;
        }
        for c in 0..cols {
            let yv = y[r * cols + c] as f64;
            out[r * cols + c] = (yv * (grad[r * cols + c] as f64 - dot)) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let k = vec![1.0f32];
        let y = conv2d_fwd(&x, &k, 1, 4, 4, 1, 1, 1);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones_center() {
        let x = vec![1.0f32; 9];
        let k = vec![1.0f32; 9];
        let y = conv2d_fwd(&x, &k, 1, 3, 3, 1, 3, 3);
        assert_eq!(y[4], 9.0); // full overlap at the center
        assert_eq!(y[0], 4.0); // corner sees a 2x2 patch
    }

    #[test]
    fn pool_mean_of_four() {
        let x = vec![1.0f32, 2.0, 3.0, 4.0];
        let y = avg_pool2d_fwd(&x, 1, 2, 2, 2);
        assert_eq!(y, vec![2.5]);
    }

    #[test]
    fn pool_constant_field_any_factor() {
        let x = vec![0.37f32; 12 * 12];
        for f in [1usize, 2, 3, 4, 6] {
            let y = avg_pool2d_fwd(&x, 1, 12, 12, f);
            assert!(y.iter().all(|&v| (v - 0.37).abs() < 1e-7), "factor {f}");
        }
    }

    #[test]
    fn pool_matches_block_mean_oracle_on_random_input() {
        let mut state = 0x1234_5678u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32 / u32::MAX as f32) * 2.0 - 1.0
        };
        let x: Vec<f32> = (0..16).map(|_| next()).collect();
        let y = avg_pool2d_fwd(&x, 1, 4, 4, 2);
        for by in 0..2 {
            for bx in 0..2 {
                let mut want = 0.0f64;
                for dy in 0..2 {
                    for dx in 0..2 {
                        want += x[(by * 2 + dy) * 4 + bx * 2 + dx] as f64;
                    }
                }
                want /= 4.0;
                assert!((y[by * 2 + bx] as f64 - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn upsample_ramp_matches_hand_rolled_bilinear() {
        // 2x2 ramp to 4x4 against the direct interpolation formula
        let x = vec![0.0f32, 1.0, 2.0, 3.0];
        let y = upsample_bilinear_fwd(&x, 1, 2, 2, 4, 4);
        for oy in 0..4 {
            let py = ((oy as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
            let (y0, ty) = (py.floor() as usize, py - py.floor());
            let y1 = (y0 + 1).min(1);
            for ox in 0..4 {
                let px = ((ox as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let (x0, tx) = (px.floor() as usize, px - px.floor());
                let x1 = (x0 + 1).min(1);
                let top = x[y0 * 2 + x0] as f64 * (1.0 - tx) + x[y0 * 2 + x1] as f64 * tx;
                let bot = x[y1 * 2 + x0] as f64 * (1.0 - tx) + x[y1 * 2 + x1] as f64 * tx;
                let want = top * (1.0 - ty) + bot * ty;
                assert!((y[oy * 4 + ox] as f64 - want).abs() < 1e-6, "({oy},{ox})");
            }
        }
    }

    #[test]
    fn upsample_identity_when_same_size() {
        let x: Vec<f32> = (0..12).map(|v| v as f32 * 0.5).collect();
        let y = upsample_bilinear_fwd(&x, 1, 3, 4, 3, 4);
        assert_eq!(y, x);
    }

    #[test]
    fn upsample_from_single_cell_fills_constant() {
        let y = upsample_bilinear_fwd(&[3.5], 1, 1, 1, 4, 4);
        assert!(y.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = vec![0.3f32, -2.0, 1.5, 0.0, 0.0, 0.0];
        let y = softmax_rows_fwd(&x, 2, 3);
        for r in 0..2 {
            let s: f32 = y[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!((y[3] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let x = vec![2.5f32; 2 * 4];
        let gain = vec![1.0f32; 2];
        let shift = vec![0.0f32; 2];
        let y = group_norm_fwd(&x, &gain, &shift, 2, 4, 1);
        assert!(y.iter().all(|&v| v.abs() < 1e-6));
    }
}
