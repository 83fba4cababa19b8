//! Coarsening-staged conditional diffusion.
//!
//! The N diffusion steps are partitioned into K contiguous stages, coarse
//! stages at high step indices. During stage k the clean target is the
//! scale-k coarse state and the denoiser is conditioned on that scale's
//! latent vector, so reverse sampling aggregates information coarse to fine.
//!
//! Two stage interpretations are available: `Global` (default) keeps one
//! cumulative noise product across all steps and only switches targets and
//! conditions per stage; `LiteralRestart` restarts the cumulative product at
//! each stage boundary and re-injects noise when the reverse pass crosses
//! into a finer stage.

use crate::codec::{ResidualEncoder, ScalePyramid};
use crate::error::TensorError;
use crate::rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Per-step noise tables (f64; cast to f32 only where values enter tensors).
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n]
    }

    pub fn alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bars[n]
    }

    /// Reverse-step standard deviation: the posterior variance
    /// `sigma_n^2 = beta_n (1 - abar_{n-1}) / (1 - abar_n)`.
    ///
    /// For long schedules with small betas this is numerically `beta_n`; for
    /// short schedules the distinction matters — injecting `beta_n` directly
    /// overshoots the variance the drift term removes and the chain never
    /// anneals onto the data manifold.
    pub fn sigma(&self, n: usize) -> f64 {
        self.sigmas[n]
    }
}

/// Linear beta ramp from `beta_start` to `beta_end` over `n` steps.
pub fn make_schedule(n: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, TensorError> {
    if n == 0 {
        return Err(TensorError::Invalid("schedule needs at least one step".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(TensorError::Invalid(format!(
            "invalid beta ramp {beta_start}..{beta_end}"
        )));
    }
    let mut betas = Vec::with_capacity(n);
    for i in 0..n {
        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        betas.push(beta_start + t * (beta_end - beta_start));
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(n);
    let mut prod = 1.0f64;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    let sigmas: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 {
                betas[0].sqrt()
            } else {
                (betas[i] * (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i])).sqrt()
            }
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
        sigmas,
    })
}

// ---------------------------------------------------------------------------
// Stage schedule
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageMode {
    /// One global cumulative product; stages switch targets and conditions.
    Global,
    /// Per-stage cumulative product with boundary re-noising in reverse.
    LiteralRestart,
}

impl StageMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global" => Some(StageMode::Global),
            "literal" => Some(StageMode::LiteralRestart),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StageMode::Global => "global",
            StageMode::LiteralRestart => "literal",
        }
    }
}

/// Partition of `total` diffusion steps into K contiguous stages: stage k
/// spans `[start(k), start(k+1))` with larger step indices in coarser stages.
#[derive(Clone, Debug)]
pub struct StageSchedule {
    total: usize,
    /// K-1 interior boundaries, strictly increasing.
    boundaries: Vec<usize>,
    pub mode: StageMode,
}

/// Boundaries at cumulative proportional shares of `total`.
pub fn make_stage_schedule(
    total: usize,
    scales: usize,
    allocation: &[f64],
) -> Result<StageSchedule, TensorError> {
    if scales == 0 || allocation.len() != scales {
        return Err(TensorError::Invalid(format!(
            "allocation must have one positive weight per scale, got {} for K={scales}",
            allocation.len()
        )));
    }
    if allocation.iter().any(|&w| w <= 0.0) {
        return Err(TensorError::Invalid("allocation weights must be positive".into()));
    }
    if total < scales {
        return Err(TensorError::Invalid(format!(
            "cannot allocate {total} steps over {scales} stages"
        )));
    }
    let sum: f64 = allocation.iter().sum();
    let mut boundaries = Vec::with_capacity(scales - 1);
    let mut cum = 0.0f64;
    for w in &allocation[..scales - 1] {
        cum += w;
        let b = (total as f64 * cum / sum).floor() as usize;
        boundaries.push(b);
    }
    // enforce strict increase with non-empty stages
    for i in 0..boundaries.len() {
        let lo = if i == 0 { 1 } else { boundaries[i - 1] + 1 };
        boundaries[i] = boundaries[i].max(lo).min(total - (scales - 1 - i));
    }
    Ok(StageSchedule {
        total,
        boundaries,
        mode: StageMode::Global,
    })
}

impl StageSchedule {
    pub fn total_steps(&self) -> usize {
        self.total
    }

    pub fn scales(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// First step index of stage k (1-based scale).
    pub fn stage_start(&self, k: usize) -> usize {
        if k <= 1 {
            0
        } else {
            self.boundaries[k - 2]
        }
    }

    /// Width of each stage in steps, finest first.
    pub fn widths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.scales());
        for k in 1..=self.scales() {
            let end = if k == self.scales() {
                self.total
            } else {
                self.boundaries[k - 1]
            };
            out.push(end - self.stage_start(k));
        }
        out
    }

    /// The scale whose half-open interval contains step n.
    pub fn stage_of_step(&self, n: usize) -> Result<usize, TensorError> {
        if n >= self.total {
            return Err(TensorError::Invalid(format!(
                "step {n} out of range 0..{}",
                self.total
            )));
        }
        let k = self.boundaries.partition_point(|&b| b <= n);
        Ok(k + 1)
    }
}

/// Effective cumulative product at step n: the global product in `Global`
/// mode, the per-stage restarted product in `LiteralRestart` mode.
pub fn alpha_bar_star(sched: &NoiseSchedule, stages: &StageSchedule, n: usize) -> f64 {
    match stages.mode {
        StageMode::Global => sched.alpha_bar(n),
        StageMode::LiteralRestart => {
            let k = stages.stage_of_step(n).expect("step in range");
            let start = stages.stage_start(k);
            if start == 0 {
                sched.alpha_bar(n)
            } else {
                sched.alpha_bar(n) / sched.alpha_bar(start - 1)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward noising and the reverse posterior step
// ---------------------------------------------------------------------------

/// `x_n = sqrt(abar*) x^k + sqrt(1 - abar*) eps` with k the stage of n.
pub fn forward_noising(
    pyramid: &ScalePyramid,
    n: usize,
    sched: &NoiseSchedule,
    stages: &StageSchedule,
    eps: &Tensor,
) -> Result<Tensor, TensorError> {
    let k = stages.stage_of_step(n)?;
    let target = pyramid.coarse(k)?;
    if target.shape() != eps.shape() {
        return Err(TensorError::ExtentMismatch {
            context: "forward_noising",
            lhs: target.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let ab = alpha_bar_star(sched, stages, n);
    let (signal, noise) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    target.zip(eps, |x, e| signal * x + noise * e)
}

/// One reverse step with explicit coefficients (exposes the alpha = 1 limit).
pub fn posterior_step_with(
    x: &Tensor,
    eps_hat: &Tensor,
    alpha: f64,
    alpha_bar: f64,
    sigma: f64,
    noise: Option<&Tensor>,
) -> Result<Tensor, TensorError> {
    let coef = ((1.0 - alpha) / (1.0 - alpha_bar).sqrt()) as f32;
    let inv_sqrt_alpha = (1.0 / alpha.sqrt()) as f32;
    let mut out = x.zip(eps_hat, |xv, ev| inv_sqrt_alpha * (xv - coef * ev))?;
    if let Some(nz) = noise {
        if sigma != 0.0 {
            out = out.zip(nz, |m, e| m + sigma as f32 * e)?;
        }
    }
    Ok(out)
}

/// One reverse step at step n using the schedule's global coefficients.
/// `noise = None` (or n = 0) yields the posterior mean only.
pub fn posterior_step(
    x: &Tensor,
    eps_hat: &Tensor,
    n: usize,
    sched: &NoiseSchedule,
    noise: Option<&Tensor>,
) -> Result<Tensor, TensorError> {
    let sigma = if n == 0 { 0.0 } else { sched.sigma(n) };
    let noise = if n == 0 { None } else { noise };
    posterior_step_with(x, eps_hat, sched.alpha(n), sched.alpha_bar(n), sigma, noise)
}

// ---------------------------------------------------------------------------
// Conditional UNet noise predictor
// ---------------------------------------------------------------------------

/// Sinusoidal embedding of a diffusion step index.
pub fn time_embedding(n: usize, dim: usize) -> Tensor {
    let half = (dim / 2).max(1);
    let mut data = vec![0.0f32; dim];
    for i in 0..half {
        let denom = if half > 1 { (half - 1) as f64 } else { 1.0 };
        let freq = (-(10000.0f64.ln()) * i as f64 / denom).exp();
        let angle = n as f64 * freq;
        data[i] = angle.sin() as f32;
        if half + i < dim {
            data[half + i] = angle.cos() as f32;
        }
    }
    Tensor::new(&[dim], data).expect("embedding shape")
}

#[derive(Clone, Debug)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Widths at full, half and quarter resolution.
    pub channels: [usize; 3],
    /// Conditioning vector length (latent dimension d).
    pub cond_dim: usize,
    pub time_dim: usize,
    pub time_hidden: usize,
    pub groups: usize,
}

impl UNetConfig {
    pub fn desk(in_channels: usize, cond_dim: usize) -> Self {
        Self {
            in_channels,
            channels: [16, 32, 32],
            cond_dim,
            time_dim: 32,
            time_hidden: 64,
            groups: 4,
        }
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    gn1_g: ParamId,
    gn1_b: ParamId,
    conv1_w: ParamId,
    conv1_b: ParamId,
    temb_w: ParamId,
    temb_b: ParamId,
    gn2_g: ParamId,
    gn2_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    skip_w: Option<ParamId>,
    skip_b: Option<ParamId>,
    groups: usize,
}

impl ResBlock {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        time_hidden: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (skip_w, skip_b) = if cin != cout {
            (
                Some(store.register_fan_in(&format!("{prefix}.skip.w"), &[cout, cin, 1, 1], cin, rng)),
                Some(store.register_zeros(&format!("{prefix}.skip.b"), &[cout])),
            )
        } else {
            (None, None)
        };
        Self {
            gn1_g: store.register_ones(&format!("{prefix}.gn1.g"), &[cin]),
            gn1_b: store.register_zeros(&format!("{prefix}.gn1.b"), &[cin]),
            conv1_w: store.register_fan_in(&format!("{prefix}.conv1.w"), &[cout, cin, 3, 3], cin * 9, rng),
            conv1_b: store.register_zeros(&format!("{prefix}.conv1.b"), &[cout]),
            temb_w: store.register_fan_in(&format!("{prefix}.temb.w"), &[cout, time_hidden], time_hidden, rng),
            temb_b: store.register_zeros(&format!("{prefix}.temb.b"), &[cout]),
            gn2_g: store.register_ones(&format!("{prefix}.gn2.g"), &[cout]),
            gn2_b: store.register_zeros(&format!("{prefix}.gn2.b"), &[cout]),
            conv2_w: store.register_fan_in(&format!("{prefix}.conv2.w"), &[cout, cout, 3, 3], cout * 9, rng),
            conv2_b: store.register_zeros(&format!("{prefix}.conv2.b"), &[cout]),
            skip_w,
            skip_b,
            groups,
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        temb: Var,
    ) -> Result<Var, TensorError> {
        let g1 = tape.param(store, self.gn1_g);
        let b1 = tape.param(store, self.gn1_b);
        let h = tape.group_norm(x, g1, b1, self.groups)?;
        let h = tape.silu(h);
        let w1 = tape.param(store, self.conv1_w);
        let cb1 = tape.param(store, self.conv1_b);
        let h = tape.conv2d(h, w1)?;
        let h = tape.add_chan(h, cb1)?;

        let tw = tape.param(store, self.temb_w);
        let tb = tape.param(store, self.temb_b);
        let t = tape.silu(temb);
        let t = tape.linear(t, tw, Some(tb))?;
        let h = tape.add_chan(h, t)?;

        let g2 = tape.param(store, self.gn2_g);
        let b2 = tape.param(store, self.gn2_b);
        let h = tape.group_norm(h, g2, b2, self.groups)?;
        let h = tape.silu(h);
        let w2 = tape.param(store, self.conv2_w);
        let cb2 = tape.param(store, self.conv2_b);
        let h = tape.conv2d(h, w2)?;
        let h = tape.add_chan(h, cb2)?;

        let skip = match (self.skip_w, self.skip_b) {
            (Some(w), Some(b)) => {
                let wv = tape.param(store, w);
                let bv = tape.param(store, b);
                let s = tape.conv2d(x, wv)?;
                tape.add_chan(s, bv)?
            }
            _ => x,
        };
        tape.add(h, skip)
    }
}

/// Self-attention over the spatial tokens of a feature map.
#[derive(Clone, Debug)]
struct SelfAttnBlock {
    gn_g: ParamId,
    gn_b: ParamId,
    q_w: ParamId,
    q_b: ParamId,
    k_w: ParamId,
    k_b: ParamId,
    v_w: ParamId,
    v_b: ParamId,
    o_w: ParamId,
    o_b: ParamId,
    groups: usize,
}

impl SelfAttnBlock {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        c: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            gn_g: store.register_ones(&format!("{prefix}.gn.g"), &[c]),
            gn_b: store.register_zeros(&format!("{prefix}.gn.b"), &[c]),
            q_w: store.register_fan_in(&format!("{prefix}.q.w"), &[c, c], c, rng),
            q_b: store.register_zeros(&format!("{prefix}.q.b"), &[c]),
            k_w: store.register_fan_in(&format!("{prefix}.k.w"), &[c, c], c, rng),
            k_b: store.register_zeros(&format!("{prefix}.k.b"), &[c]),
            v_w: store.register_fan_in(&format!("{prefix}.v.w"), &[c, c], c, rng),
            v_b: store.register_zeros(&format!("{prefix}.v.b"), &[c]),
            // zero-init output projection: the block starts as the identity
            o_w: store.register_zeros(&format!("{prefix}.o.w"), &[c, c]),
            o_b: store.register_zeros(&format!("{prefix}.o.b"), &[c]),
            groups,
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let shape = tape.value(x).shape().to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let g = tape.param(store, self.gn_g);
        let b = tape.param(store, self.gn_b);
        let t = tape.group_norm(x, g, b, self.groups)?;
        let flat = tape.reshape(t, &[c, h * w])?;
        let tokens = tape.transpose2d(flat)?; // [S, C]
        let qw = tape.param(store, self.q_w);
        let qb = tape.param(store, self.q_b);
        let kw = tape.param(store, self.k_w);
        let kb = tape.param(store, self.k_b);
        let vw = tape.param(store, self.v_w);
        let vb = tape.param(store, self.v_b);
        let q = tape.linear(tokens, qw, Some(qb))?;
        let k = tape.linear(tokens, kw, Some(kb))?;
        let v = tape.linear(tokens, vw, Some(vb))?;
        let a = tape.attention(q, k, v)?;
        let ow = tape.param(store, self.o_w);
        let ob = tape.param(store, self.o_b);
        let o = tape.linear(a, ow, Some(ob))?;
        let o = tape.transpose2d(o)?; // [C, S]
        let o = tape.reshape(o, &[c, h, w])?;
        tape.add(x, o)
    }
}

/// Cross-attention block injecting the conditioning latent into the feature
/// map. Queries come from the feature tokens; the latent is expanded into a
/// small set of condition tokens providing keys and values, so the injected
/// update varies spatially.
#[derive(Clone, Debug)]
struct CondAttnBlock {
    gn_g: ParamId,
    gn_b: ParamId,
    q_w: ParamId,
    q_b: ParamId,
    k_w: ParamId,
    v_w: ParamId,
    o_w: ParamId,
    o_b: ParamId,
    groups: usize,
    cond_tokens: usize,
}

impl CondAttnBlock {
    const COND_TOKENS: usize = 4;

    fn init(
        store: &mut ParamStore,
        prefix: &str,
        c: usize,
        cond_dim: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let nt = Self::COND_TOKENS;
        Self {
            gn_g: store.register_ones(&format!("{prefix}.gn.g"), &[c]),
            gn_b: store.register_zeros(&format!("{prefix}.gn.b"), &[c]),
            q_w: store.register_fan_in(&format!("{prefix}.q.w"), &[c, c], c, rng),
            q_b: store.register_zeros(&format!("{prefix}.q.b"), &[c]),
            k_w: store.register_fan_in(&format!("{prefix}.k.w"), &[nt * c, cond_dim], cond_dim, rng),
            v_w: store.register_fan_in(&format!("{prefix}.v.w"), &[nt * c, cond_dim], cond_dim, rng),
            // zero-init output projection: conditioning starts as a no-op,
            // so an untrained denoiser has no incentive to squash the latent
            o_w: store.register_zeros(&format!("{prefix}.o.w"), &[c, c]),
            o_b: store.register_zeros(&format!("{prefix}.o.b"), &[c]),
            groups,
            cond_tokens: nt,
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cond: Var,
    ) -> Result<Var, TensorError> {
        let shape = tape.value(x).shape().to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let g = tape.param(store, self.gn_g);
        let b = tape.param(store, self.gn_b);
        let t = tape.group_norm(x, g, b, self.groups)?;
        let flat = tape.reshape(t, &[c, h * w])?;
        let tokens = tape.transpose2d(flat)?; // [S, C]
        let qw = tape.param(store, self.q_w);
        let qb = tape.param(store, self.q_b);
        let kw = tape.param(store, self.k_w);
        let vw = tape.param(store, self.v_w);
        let q = tape.linear(tokens, qw, Some(qb))?; // [S, C]
        let k = tape.linear(cond, kw, None)?; // [nt * C]
        let k = tape.reshape(k, &[self.cond_tokens, c])?;
        let v = tape.linear(cond, vw, None)?;
        let v = tape.reshape(v, &[self.cond_tokens, c])?;
        let a = tape.attention(q, k, v)?; // [S, C]
        let ow = tape.param(store, self.o_w);
        let ob = tape.param(store, self.o_b);
        let o = tape.linear(a, ow, Some(ob))?;
        let o = tape.transpose2d(o)?; // [C, S]
        let o = tape.reshape(o, &[c, h, w])?;
        tape.add(x, o)
    }
}

/// Channels of the latent-derived spatial map concatenated to the input.
const COND_MAP_CHANNELS: usize = 4;
/// Fixed edge length of the latent-derived map before upsampling.
const COND_MAP_EDGE: usize = 4;

/// Three-level UNet with step embedding, self-attention at the two coarser
/// levels and conditional attention after every upsampling-path block. The
/// conditioning latent additionally enters as a learned low-resolution
/// spatial map concatenated to the input, which couples it to the loss from
/// the first convolution on.
#[derive(Clone, Debug)]
pub struct CondUNet {
    pub cfg: UNetConfig,
    temb_l1_w: ParamId,
    temb_l1_b: ParamId,
    temb_l2_w: ParamId,
    temb_l2_b: ParamId,
    cond_map_w: ParamId,
    cond_map_b: ParamId,
    stem_w: ParamId,
    stem_b: ParamId,
    d0: [ResBlock; 2],
    d1: [ResBlock; 2],
    d1_attn: [SelfAttnBlock; 2],
    d2: [ResBlock; 2],
    d2_attn: [SelfAttnBlock; 2],
    u1: [ResBlock; 2],
    u1_cond: [CondAttnBlock; 2],
    u0: [ResBlock; 2],
    u0_cond: [CondAttnBlock; 2],
    head_gn_g: ParamId,
    head_gn_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl CondUNet {
    pub fn init(store: &mut ParamStore, cfg: UNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let [c0, c1, c2] = cfg.channels;
        let (th, g) = (cfg.time_hidden, cfg.groups);
        Self {
            temb_l1_w: store.register_fan_in("unet.temb.l1.w", &[th, cfg.time_dim], cfg.time_dim, rng),
            temb_l1_b: store.register_zeros("unet.temb.l1.b", &[th]),
            temb_l2_w: store.register_fan_in("unet.temb.l2.w", &[th, th], th, rng),
            temb_l2_b: store.register_zeros("unet.temb.l2.b", &[th]),
            cond_map_w: store.register_fan_in(
                "unet.cond_map.w",
                &[COND_MAP_CHANNELS * COND_MAP_EDGE * COND_MAP_EDGE, cfg.cond_dim],
                cfg.cond_dim,
                rng,
            ),
            cond_map_b: store.register_zeros(
                "unet.cond_map.b",
                &[COND_MAP_CHANNELS * COND_MAP_EDGE * COND_MAP_EDGE],
            ),
            stem_w: store.register_fan_in(
                "unet.stem.w",
                &[c0, cfg.in_channels + COND_MAP_CHANNELS, 3, 3],
                (cfg.in_channels + COND_MAP_CHANNELS) * 9,
                rng,
            ),
            stem_b: store.register_zeros("unet.stem.b", &[c0]),
            d0: [
                ResBlock::init(store, "unet.d0.0", c0, c0, th, g, rng),
                ResBlock::init(store, "unet.d0.1", c0, c0, th, g, rng),
            ],
            d1: [
                ResBlock::init(store, "unet.d1.0", c0, c1, th, g, rng),
                ResBlock::init(store, "unet.d1.1", c1, c1, th, g, rng),
            ],
            d1_attn: [
                SelfAttnBlock::init(store, "unet.d1.0.attn", c1, g, rng),
                SelfAttnBlock::init(store, "unet.d1.1.attn", c1, g, rng),
            ],
            d2: [
                ResBlock::init(store, "unet.d2.0", c1, c2, th, g, rng),
                ResBlock::init(store, "unet.d2.1", c2, c2, th, g, rng),
            ],
            d2_attn: [
                SelfAttnBlock::init(store, "unet.d2.0.attn", c2, g, rng),
                SelfAttnBlock::init(store, "unet.d2.1.attn", c2, g, rng),
            ],
            u1: [
                ResBlock::init(store, "unet.u1.0", c2 + c1, c1, th, g, rng),
                ResBlock::init(store, "unet.u1.1", c1, c1, th, g, rng),
            ],
            u1_cond: [
                CondAttnBlock::init(store, "unet.u1.0.cond", c1, cfg.cond_dim, g, rng),
                CondAttnBlock::init(store, "unet.u1.1.cond", c1, cfg.cond_dim, g, rng),
            ],
            u0: [
                ResBlock::init(store, "unet.u0.0", c1 + c0, c0, th, g, rng),
                ResBlock::init(store, "unet.u0.1", c0, c0, th, g, rng),
            ],
            u0_cond: [
                CondAttnBlock::init(store, "unet.u0.0.cond", c0, cfg.cond_dim, g, rng),
                CondAttnBlock::init(store, "unet.u0.1.cond", c0, cfg.cond_dim, g, rng),
            ],
            head_gn_g: store.register_ones("unet.head.gn.g", &[c0]),
            head_gn_b: store.register_zeros("unet.head.gn.b", &[c0]),
            head_w: store.register_fan_in("unet.head.w", &[cfg.in_channels, c0, 3, 3], c0 * 9, rng),
            head_b: store.register_zeros("unet.head.b", &[cfg.in_channels]),
            cfg,
        }
    }

    /// Predict the noise in `x_n` at diffusion step `n`, conditioned on a
    /// latent vector. The output shape equals the input shape.
    pub fn predict_noise(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_n: &Tensor,
        n: usize,
        cond: Var,
    ) -> Result<Var, TensorError> {
        if tape.value(cond).shape() != [self.cfg.cond_dim] {
            return Err(TensorError::ExtentMismatch {
                context: "unet condition length",
                lhs: vec![self.cfg.cond_dim],
                rhs: tape.value(cond).shape().to_vec(),
            });
        }
        let (h, w) = (x_n.shape()[1], x_n.shape()[2]);
        let x = tape.constant(x_n.clone());

        // step embedding MLP
        let e0 = tape.constant(time_embedding(n, self.cfg.time_dim));
        let l1w = tape.param(store, self.temb_l1_w);
        let l1b = tape.param(store, self.temb_l1_b);
        let l2w = tape.param(store, self.temb_l2_w);
        let l2b = tape.param(store, self.temb_l2_b);
        let t = tape.linear(e0, l1w, Some(l1b))?;
        let t = tape.silu(t);
        let temb = tape.linear(t, l2w, Some(l2b))?;

        // latent-derived spatial map joins the input channels
        let mw = tape.param(store, self.cond_map_w);
        let mb = tape.param(store, self.cond_map_b);
        let m = tape.linear(cond, mw, Some(mb))?;
        let m = tape.reshape(m, &[COND_MAP_CHANNELS, COND_MAP_EDGE, COND_MAP_EDGE])?;
        let m = tape.upsample_bilinear(m, h, w)?;
        let x = tape.concat_chan(x, m)?;

        let sw = tape.param(store, self.stem_w);
        let sb = tape.param(store, self.stem_b);
        let hstem = tape.conv2d(x, sw)?;
        let mut h0 = tape.add_chan(hstem, sb)?;
        for rb in &self.d0 {
            h0 = rb.forward(tape, store, h0, temb)?;
        }
        let mut h1 = tape.avg_pool2d(h0, 2)?;
        for (rb, at) in self.d1.iter().zip(self.d1_attn.iter()) {
            h1 = rb.forward(tape, store, h1, temb)?;
            h1 = at.forward(tape, store, h1)?;
        }
        let mut h2 = tape.avg_pool2d(h1, 2)?;
        for (rb, at) in self.d2.iter().zip(self.d2_attn.iter()) {
            h2 = rb.forward(tape, store, h2, temb)?;
            h2 = at.forward(tape, store, h2)?;
        }

        let up1 = tape.upsample_bilinear(h2, h / 2, w / 2)?;
        let mut u1 = tape.concat_chan(up1, h1)?;
        for (rb, ca) in self.u1.iter().zip(self.u1_cond.iter()) {
            u1 = rb.forward(tape, store, u1, temb)?;
            u1 = ca.forward(tape, store, u1, cond)?;
        }
        let up0 = tape.upsample_bilinear(u1, h, w)?;
        let mut u0 = tape.concat_chan(up0, h0)?;
        for (rb, ca) in self.u0.iter().zip(self.u0_cond.iter()) {
            u0 = rb.forward(tape, store, u0, temb)?;
            u0 = ca.forward(tape, store, u0, cond)?;
        }

        let hg = tape.param(store, self.head_gn_g);
        let hb = tape.param(store, self.head_gn_b);
        let out = tape.group_norm(u0, hg, hb, self.cfg.groups)?;
        let out = tape.silu(out);
        let hw_ = tape.param(store, self.head_w);
        let hbb = tape.param(store, self.head_b);
        let out = tape.conv2d(out, hw_)?;
        tape.add_chan(out, hbb)
    }
}

// ---------------------------------------------------------------------------
// Reverse sampling
// ---------------------------------------------------------------------------

/// Pluggable single-step noise estimate.
pub trait Denoiser {
    fn predict(&mut self, x_n: &Tensor, n: usize, cond: &Tensor) -> Result<Tensor, TensorError>;
}

/// The trained UNet behind the [`Denoiser`] interface (scratch tape per call).
pub struct ModelDenoiser<'a> {
    pub store: &'a ParamStore,
    pub unet: &'a CondUNet,
}

impl Denoiser for ModelDenoiser<'_> {
    fn predict(&mut self, x_n: &Tensor, n: usize, cond: &Tensor) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let c = tape.constant(cond.clone());
        let out = self.unet.predict_noise(&mut tape, self.store, x_n, n, c)?;
        Ok(tape.value(out).clone())
    }
}

/// Per-scale latent conditions `[K, d]` at one dynamical time.
#[derive(Clone, Debug)]
pub struct LatentState {
    pub z: Tensor,
    pub tau: f32,
}

impl LatentState {
    pub fn new(z: Tensor, tau: f32) -> Result<Self, TensorError> {
        if z.shape().len() != 2 {
            return Err(TensorError::BadRank {
                expected: 2,
                shape: z.shape().to_vec(),
            });
        }
        Ok(Self { z, tau })
    }

    pub fn scales(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.z.shape()[1]
    }

    /// Latent vector of scale k (1-based).
    pub fn scale(&self, k: usize) -> Result<Tensor, TensorError> {
        self.z.row(k - 1)
    }
}

/// Full reverse chain from standard normal noise at step N-1 down to a
/// sample at step 0, conditioning each step on the latent of its stage.
/// Returns the sample and the per-step stage trace (descending step order).
pub fn reverse_sample(
    den: &mut dyn Denoiser,
    conditions: &LatentState,
    sched: &NoiseSchedule,
    stages: &StageSchedule,
    shape: &[usize],
    seed: u64,
) -> Result<(Tensor, Vec<usize>), TensorError> {
    if conditions.scales() != stages.scales() {
        return Err(TensorError::ExtentMismatch {
            context: "reverse_sample conditions",
            lhs: vec![stages.scales()],
            rhs: vec![conditions.scales()],
        });
    }
    let total = stages.total_steps();
    let mut rng = rng::substream(seed, 0x53414d50); // "SAMP"
    let mut x = Tensor::randn(shape, &mut rng);
    let mut trace = Vec::with_capacity(total);
    for n in (0..total).rev() {
        let k = stages.stage_of_step(n)?;
        // crossing into a finer stage under the literal schedule: the held
        // state is nearly clean, so re-noise it to this stage's entry level
        if stages.mode == StageMode::LiteralRestart && n + 1 < total {
            let k_prev = stages.stage_of_step(n + 1)?;
            if k < k_prev {
                let ab = alpha_bar_star(sched, stages, n);
                let fresh = Tensor::randn(shape, &mut rng);
                let (s, q) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
                x = x.zip(&fresh, |xv, e| s * xv + q * e)?;
            }
        }
        trace.push(k);
        let cond = conditions.scale(k)?;
        let eps_hat = den.predict(&x, n, &cond)?;
        let noise = if n > 0 {
            Some(Tensor::randn(shape, &mut rng))
        } else {
            None
        };
        let ab = alpha_bar_star(sched, stages, n);
        let sigma = if n == 0 { 0.0 } else { sched.sigma(n) };
        x = posterior_step_with(&x, &eps_hat, sched.alpha(n), ab, sigma, noise.as_ref())?;
    }
    Ok((x, trace))
}

// ---------------------------------------------------------------------------
// Denoising losses
// ---------------------------------------------------------------------------

/// Noise-estimation loss of one snapshot for a fixed step/noise draw, with a
/// caller-supplied condition var (from the encoder or the predictor).
pub fn denoising_loss_at(
    tape: &mut Tape,
    store: &ParamStore,
    unet: &CondUNet,
    pyramid: &ScalePyramid,
    cond: Var,
    n: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
    stages: &StageSchedule,
) -> Result<Var, TensorError> {
    let x_n = forward_noising(pyramid, n, sched, stages, eps)?;
    let eps_hat = unet.predict_noise(tape, store, &x_n, n, cond)?;
    let target = tape.constant(eps.clone());
    tape.mse(eps_hat, target)
}

/// Mean noise-estimation loss over a batch of snapshots: per sample a step n
/// is drawn uniformly, the stage-k coarse target noised, and the denoiser
/// conditioned on that scale's encoded latent.
#[allow(clippy::too_many_arguments)]
pub fn latent_loss(
    tape: &mut Tape,
    store: &ParamStore,
    encoder: &ResidualEncoder,
    unet: &CondUNet,
    batch: &[Tensor],
    sched: &NoiseSchedule,
    stages: &StageSchedule,
    factor_mode: crate::codec::FactorMode,
    rng: &mut ChaCha8Rng,
) -> Result<Var, TensorError> {
    assert!(!batch.is_empty(), "latent_loss on empty batch");
    let total = stages.total_steps();
    let mut acc: Option<Var> = None;
    for x in batch {
        let n = (rng::uniform(rng, 0.0, total as f64) as usize).min(total - 1);
        let k = stages.stage_of_step(n)?;
        let pyramid = crate::codec::decompose_residuals(x, stages.scales(), factor_mode)?;
        let eps = Tensor::randn(x.shape(), rng);
        let r = tape.constant(pyramid.residual(k)?.clone());
        let z = encoder.encode_scale(tape, store, r, k)?;
        let term = denoising_loss_at(tape, store, unet, &pyramid, z, n, &eps, sched, stages)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let sum = acc.expect("non-empty batch");
    Ok(tape.mul_scalar(sum, 1.0 / batch.len() as f32))
}
