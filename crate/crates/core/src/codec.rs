//! Multiscale residual coding and the scale-aware encoder.
//!
//! A snapshot is split into per-scale residuals whose sum reconstructs it
//! exactly: the coarsest residual is the coarsened snapshot, and each finer
//! residual coarsens what the coarser scales have not explained. Scale 1 uses
//! the identity coarsening, which forces the telescoping sum to close.
//!
//! The coarsening operator is average pooling by the scale factor followed by
//! bilinear upsampling back to the original resolution (reflect padding when
//! the factor does not divide the extents).

use crate::error::TensorError;
use crate::tensor::kernels::{avg_pool2d_fwd, upsample_bilinear_fwd};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// How scale index k maps to a pooling factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorMode {
    /// factor = k
    Linear,
    /// factor = 2^(k-1)
    PowerOfTwo,
}

impl FactorMode {
    pub fn factor(&self, k: usize) -> usize {
        match self {
            FactorMode::Linear => k,
            FactorMode::PowerOfTwo => 1 << (k - 1),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(FactorMode::Linear),
            "pow2" => Some(FactorMode::PowerOfTwo),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FactorMode::Linear => "linear",
            FactorMode::PowerOfTwo => "pow2",
        }
    }
}

/// Reflect-pad (edge-inclusive) the spatial extents up to multiples of `f`.
fn reflect_pad_to_multiple(x: &Tensor, f: usize) -> Result<Tensor, TensorError> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ph = h.div_ceil(f) * f;
    let pw = w.div_ceil(f) * f;
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let src = x.data();
    let mut out = vec![0.0f32; c * ph * pw];
    for ch in 0..c {
        for y in 0..ph {
            let sy = if y < h { y } else { (2 * h).saturating_sub(y + 1).min(h - 1) };
            for xx in 0..pw {
                let sx = if xx < w { xx } else { (2 * w).saturating_sub(xx + 1).min(w - 1) };
                out[(ch * ph + y) * pw + xx] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Tensor::new(&[c, ph, pw], out)
}

/// Average-pool by the scale factor, then bilinearly upsample back to the
/// input resolution. Exact identity at k = 1.
pub fn coarsen(x: &Tensor, k: usize, mode: FactorMode) -> Result<Tensor, TensorError> {
    if k < 1 {
        return Err(TensorError::ScaleOutOfRange { k, scales: 0 });
    }
    if x.shape().len() != 3 {
        return Err(TensorError::BadRank {
            expected: 3,
            shape: x.shape().to_vec(),
        });
    }
    let f = mode.factor(k);
    if f == 1 {
        return Ok(x.clone());
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let padded = reflect_pad_to_multiple(x, f)?;
    let (ph, pw) = (padded.shape()[1], padded.shape()[2]);
    let pooled = avg_pool2d_fwd(padded.data(), c, ph, pw, f);
    let (gh, gw) = (ph / f, pw / f);
    let up = upsample_bilinear_fwd(&pooled, c, gh, gw, h, w);
    Tensor::new(&[c, h, w], up)
}

/// Per-scale residuals and cumulative coarse states of one snapshot, all at
/// full resolution. Scale indices are 1-based, 1 = finest.
#[derive(Clone, Debug)]
pub struct ScalePyramid {
    residuals: Vec<Tensor>,
    coarse: Vec<Tensor>,
    scales: usize,
}

impl ScalePyramid {
    pub fn scales(&self) -> usize {
        self.scales
    }

    /// Residual at scale k.
    pub fn residual(&self, k: usize) -> Result<&Tensor, TensorError> {
        self.check(k)?;
        Ok(&self.residuals[k - 1])
    }

    /// Coarse state at scale k: the sum of residuals from k up to K.
    pub fn coarse(&self, k: usize) -> Result<&Tensor, TensorError> {
        self.check(k)?;
        Ok(&self.coarse[k - 1])
    }

    fn check(&self, k: usize) -> Result<(), TensorError> {
        if k < 1 || k > self.scales {
            return Err(TensorError::ScaleOutOfRange {
                k,
                scales: self.scales,
            });
        }
        Ok(())
    }
}

/// Decompose a snapshot into `scales` residuals, coarse to fine.
pub fn decompose_residuals(
    x: &Tensor,
    scales: usize,
    mode: FactorMode,
) -> Result<ScalePyramid, TensorError> {
    if scales < 1 {
        return Err(TensorError::ScaleOutOfRange { k: scales, scales });
    }
    let mut residuals = vec![Tensor::zeros(x.shape()); scales];
    let mut remainder = x.clone();
    for k in (1..=scales).rev() {
        let r = coarsen(&remainder, k, mode)?;
        remainder = remainder.zip(&r, |a, b| a - b)?;
        residuals[k - 1] = r;
    }
    let mut coarse = vec![Tensor::zeros(x.shape()); scales];
    let mut acc = Tensor::zeros(x.shape());
    for k in (1..=scales).rev() {
        acc = acc.zip(&residuals[k - 1], |a, b| a + b)?;
        coarse[k - 1] = acc.clone();
    }
    Ok(ScalePyramid {
        residuals,
        coarse,
        scales,
    })
}

/// Coarse state at scale k recomputed by accumulation.
pub fn accumulate_coarse(pyramid: &ScalePyramid, k: usize) -> Result<Tensor, TensorError> {
    pyramid.check(k)?;
    let mut acc = pyramid.residuals[pyramid.scales - 1].clone();
    for i in (k..pyramid.scales).rev() {
        acc = acc.zip(&pyramid.residuals[i - 1], |a, b| a + b)?;
    }
    Ok(acc)
}

/// Encoder hyperparameters.
#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Channel widths of the two blocks.
    pub channels: [usize; 2],
    pub latent_dim: usize,
    pub scales: usize,
    pub groups: usize,
    /// Grid the flatten head is sized for.
    pub grid: (usize, usize),
}

impl EncoderConfig {
    fn head_in(&self) -> usize {
        let (h, w) = self.grid;
        self.channels[1] * (h / 4) * (w / 4)
    }
}

/// One encoder block: Conv, GroupNorm, SiLU, AvgPool, then channel and
/// spatial attention gates.
#[derive(Clone, Debug)]
struct ConvBlock {
    conv_w: ParamId,
    conv_b: ParamId,
    gn_g: ParamId,
    gn_b: ParamId,
    ca_l1_w: ParamId,
    ca_l1_b: ParamId,
    ca_l2_w: ParamId,
    ca_l2_b: ParamId,
    sa_w: ParamId,
    sa_b: ParamId,
    groups: usize,
}

impl ConvBlock {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let hidden = (cout / 4).max(1);
        Self {
            conv_w: store.register_fan_in(
                &format!("{prefix}.conv.w"),
                &[cout, cin, 3, 3],
                cin * 9,
                rng,
            ),
            conv_b: store.register_zeros(&format!("{prefix}.conv.b"), &[cout]),
            gn_g: store.register_ones(&format!("{prefix}.gn.g"), &[cout]),
            gn_b: store.register_zeros(&format!("{prefix}.gn.b"), &[cout]),
            ca_l1_w: store.register_fan_in(&format!("{prefix}.ca.l1.w"), &[hidden, cout], cout, rng),
            ca_l1_b: store.register_zeros(&format!("{prefix}.ca.l1.b"), &[hidden]),
            ca_l2_w: store.register_fan_in(&format!("{prefix}.ca.l2.w"), &[cout, hidden], hidden, rng),
            ca_l2_b: store.register_zeros(&format!("{prefix}.ca.l2.b"), &[cout]),
            sa_w: store.register_fan_in(&format!("{prefix}.sa.w"), &[1, 2, 5, 5], 2 * 25, rng),
            sa_b: store.register_zeros(&format!("{prefix}.sa.b"), &[1]),
            groups,
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.conv_w);
        let b = tape.param(store, self.conv_b);
        let g = tape.param(store, self.gn_g);
        let s = tape.param(store, self.gn_b);
        let h = tape.conv2d(x, w)?;
        let h = tape.add_chan(h, b)?;
        let h = tape.group_norm(h, g, s, self.groups)?;
        let h = tape.silu(h);
        let h = tape.avg_pool2d(h, 2)?;

        // channel gate: shared MLP over mean- and max-pooled descriptors
        let l1w = tape.param(store, self.ca_l1_w);
        let l1b = tape.param(store, self.ca_l1_b);
        let l2w = tape.param(store, self.ca_l2_w);
        let l2b = tape.param(store, self.ca_l2_b);
        let avg = tape.spatial_mean(h)?;
        let mx = tape.spatial_max(h)?;
        let mut gates = Vec::with_capacity(2);
        for desc in [avg, mx] {
            let t = tape.linear(desc, l1w, Some(l1b))?;
            let t = tape.silu(t);
            gates.push(tape.linear(t, l2w, Some(l2b))?);
        }
        let gate = tape.add(gates[0], gates[1])?;
        let gate = tape.sigmoid(gate);
        let h = tape.mul_chan(h, gate)?;

        // spatial gate: conv over stacked channel mean/max maps
        let saw = tape.param(store, self.sa_w);
        let sab = tape.param(store, self.sa_b);
        let m_avg = tape.chan_mean(h)?;
        let m_max = tape.chan_max(h)?;
        let stack = tape.concat_chan(m_avg, m_max)?;
        let sgate = tape.conv2d(stack, saw)?;
        let sgate = tape.add_chan(sgate, sab)?;
        let sgate = tape.sigmoid(sgate);
        tape.mul_spatial(h, sgate)
    }
}

/// Shared-parameter encoder distinguished across scales only by a learned
/// scale embedding added after the first block.
#[derive(Clone, Debug)]
pub struct ResidualEncoder {
    pub cfg: EncoderConfig,
    b1: ConvBlock,
    b2: ConvBlock,
    scale_emb: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl ResidualEncoder {
    pub fn init(store: &mut ParamStore, cfg: EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let b1 = ConvBlock::init(store, "enc.b1", cfg.in_channels, cfg.channels[0], cfg.groups, rng);
        let b2 = ConvBlock::init(store, "enc.b2", cfg.channels[0], cfg.channels[1], cfg.groups, rng);
        let scale_emb = store.register_fan_in(
            "enc.scale_emb",
            &[cfg.scales, cfg.channels[0]],
            cfg.channels[0],
            rng,
        );
        let head_in = cfg.head_in();
        let head_w = store.register_fan_in("enc.head.w", &[cfg.latent_dim, head_in], head_in, rng);
        let head_b = store.register_zeros("enc.head.b", &[cfg.latent_dim]);
        Self {
            cfg,
            b1,
            b2,
            scale_emb,
            head_w,
            head_b,
        }
    }

    /// Encode one residual at scale k into a length-d latent vector.
    pub fn encode_scale(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        residual: Var,
        k: usize,
    ) -> Result<Var, TensorError> {
        if k < 1 || k > self.cfg.scales {
            return Err(TensorError::ScaleOutOfRange {
                k,
                scales: self.cfg.scales,
            });
        }
        let h1 = self.b1.forward(tape, store, residual)?;
        let table = tape.param(store, self.scale_emb);
        let emb = tape.select_row(table, k - 1)?;
        let h1 = tape.add_chan(h1, emb)?;
        let h2 = self.b2.forward(tape, store, h1)?;
        let flat = tape.reshape(h2, &[tape.value(h2).len()])?;
        let w = tape.param(store, self.head_w);
        let b = tape.param(store, self.head_b);
        tape.linear(flat, w, Some(b))
    }

    /// Decompose a snapshot and encode every residual: returns K latent vars.
    pub fn encode_all(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Tensor,
        mode: FactorMode,
    ) -> Result<Vec<Var>, TensorError> {
        let pyramid = decompose_residuals(x, self.cfg.scales, mode)?;
        let mut out = Vec::with_capacity(self.cfg.scales);
        for k in 1..=self.cfg.scales {
            let r = tape.constant(pyramid.residual(k)?.clone());
            out.push(self.encode_scale(tape, store, r, k)?);
        }
        Ok(out)
    }

    /// Stack per-scale latents into a `[K, d]` var.
    pub fn stack_latents(&self, tape: &mut Tape, latents: &[Var]) -> Result<Var, TensorError> {
        tape.stack_rows(latents)
    }
}
