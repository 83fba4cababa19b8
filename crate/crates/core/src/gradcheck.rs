//! Central finite-difference verification of analytic gradients.
//!
//! The difference quotients are formed in f64 from f32 forward evaluations and
//! compared with a relative error that falls back to absolute comparison for
//! near-zero coordinates.

/// Central finite-difference gradient of `f` at `x`, one coordinate at a time.
///
/// The step balances f32 forward rounding (noise ~ eps/h) against truncation
/// (~ h^2): `h = 1e-2 * max(1, |x|)`.
pub fn finite_diff(f: &mut dyn FnMut(&[f32]) -> f32, x: &[f32]) -> Vec<f64> {
    let mut grad = vec![0.0f64; x.len()];
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-2f32 * x[i].abs().max(1.0);
        buf[i] = x[i] + h;
        let fp = f(&buf) as f64;
        buf[i] = x[i] - h;
        let fm = f(&buf) as f64;
        buf[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h as f64);
    }
    grad
}

/// Worst relative error between analytic and numeric gradients.
///
/// `floor` guards coordinates where both gradients are tiny: the denominator
/// is `max(|analytic|, |numeric|, floor)`.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let a = a as f64;
        let denom = a.abs().max(n.abs()).max(floor);
        let err = (a - n).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Relative error between gradients in the L2 norm. The per-coordinate check
/// drowns in difference-quotient noise on deep compositions whose smallest
/// gradient entries sit near the f32 forward noise; whole-vector comparison
/// is the meaningful form there.
pub fn l2_rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0f64;
    let mut na = 0.0f64;
    let mut nn = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        diff += (a as f64 - n) * (a as f64 - n);
        na += (a as f64) * (a as f64);
        nn += n * n;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

/// Check a scalar-valued function of a flat input against its analytic
/// gradient with the two-tolerance criterion
/// `|a - n| <= rtol * max(|a|, |n|) + atol`.
///
/// The absolute tolerance covers the f32 difference-quotient noise floor,
/// `~eps_f32 * |loss| / (2h)`, with margin; a wrong backward still fails the
/// relative part by orders of magnitude. Returns the worst excess ratio
/// (<= 1 passes).
pub fn check_tol(
    f: &mut dyn FnMut(&[f32]) -> f32,
    x: &[f32],
    analytic: &[f32],
    rtol: f64,
) -> f64 {
    let base = f(x).abs().max(1.0) as f64;
    let atol = 3e-4 * base;
    let numeric = finite_diff(f, x);
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let a = a as f64;
        let allowed = rtol * a.abs().max(n.abs()) + atol;
        let excess = (a - n).abs() / allowed;
        if excess > worst {
            worst = excess;
        }
    }
    worst
}

/// Convenience: check a scalar-valued function of a flat input against its
/// analytic gradient; returns the worst relative error.
pub fn check(
    f: &mut dyn FnMut(&[f32]) -> f32,
    x: &[f32],
    analytic: &[f32],
    floor: f64,
) -> f64 {
    let numeric = finite_diff(f, x);
    max_rel_err(analytic, &numeric, floor)
}

/// Convenience: L2-form gradient check for composed paths.
pub fn check_l2(f: &mut dyn FnMut(&[f32]) -> f32, x: &[f32], analytic: &[f32]) -> f64 {
    let numeric = finite_diff(f, x);
    l2_rel_err(analytic, &numeric)
}

/// Matrix exponential by scaling-and-squaring with a Taylor series, f64.
///
/// Reference oracle for linear ODE solutions `y(t) = expm(A t) y0`; accurate
/// to near machine precision for the small systems used in verification.
pub fn expm(matrix: &[f64], dim: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), dim * dim);
    let norm = matrix
        .chunks(dim)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let s = norm.log2().ceil().max(0.0) as u32 + 1;
    let scale = 1.0 / (1u64 << s) as f64;
    let a: Vec<f64> = matrix.iter().map(|v| v * scale).collect();

    let matmul = |x: &[f64], y: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0f64; dim * dim];
        for i in 0..dim {
            for k in 0..dim {
                let xv = x[i * dim + k];
                for j in 0..dim {
                    out[i * dim + j] += xv * y[k * dim + j];
                }
            }
        }
        out
    };

    // exp(A/2^s) by Taylor series
    let mut result = vec![0.0f64; dim * dim];
    for i in 0..dim {
        result[i * dim + i] = 1.0;
    }
    let mut term = result.clone();
    for k in 1..=20 {
        term = matmul(&term, &a);
        let inv = 1.0 / k as f64;
        for v in term.iter_mut() {
            *v *= inv;
        }
        for (r, t) in result.iter_mut().zip(term.iter()) {
            *r += t;
        }
    }
    // square s times
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}
