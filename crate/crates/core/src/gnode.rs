//! Cross-scale latent dynamics: per-scale self-dynamics plus graph-attention
//! interaction over the fully connected scale graph, integrated as an ODE.
//!
//! Training uses fixed-step RK4 recorded on the tape (gradients flow through
//! every solver stage); inference can also use an adaptive Dormand-Prince
//! integrator running in f64.

use crate::error::{TensorError, TrainError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Debug)]
pub struct GnodeConfig {
    pub latent_dim: usize,
    pub scales: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

/// Shared MLP self-dynamics with a scale embedding, and a single-head
/// additive-scoring graph attention interaction. The adjacency is the
/// all-ones matrix (fully connected including self-loops), realized by
/// softmax normalization over every node.
#[derive(Clone, Debug)]
pub struct GraphDynamics {
    pub cfg: GnodeConfig,
    emb: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
    gat_w: ParamId,
    gat_a_src: ParamId,
    gat_a_dst: ParamId,
    /// Ablation switch: self-dynamics only when false.
    pub interaction_enabled: bool,
}

impl GraphDynamics {
    pub fn init(store: &mut ParamStore, cfg: GnodeConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.latent_dim;
        let input = d + cfg.embed_dim;
        Self {
            emb: store.register_fan_in("gnode.emb", &[cfg.scales, cfg.embed_dim], cfg.embed_dim, rng),
            mlp_w1: store.register_fan_in("gnode.mlp.l1.w", &[cfg.hidden, input], input, rng),
            mlp_b1: store.register_zeros("gnode.mlp.l1.b", &[cfg.hidden]),
            mlp_w2: store.register_fan_in("gnode.mlp.l2.w", &[d, cfg.hidden], cfg.hidden, rng),
            mlp_b2: store.register_zeros("gnode.mlp.l2.b", &[d]),
            gat_w: store.register_fan_in("gnode.gat.w", &[d, d], d, rng),
            gat_a_src: store.register_fan_in("gnode.gat.a_src", &[1, d], d, rng),
            gat_a_dst: store.register_fan_in("gnode.gat.a_dst", &[1, d], d, rng),
            cfg,
            interaction_enabled: true,
        }
    }

    /// Scale-local derivative contribution for one latent vector.
    pub fn self_dynamics(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_k: Var,
        k: usize,
    ) -> Result<Var, TensorError> {
        if k < 1 || k > self.cfg.scales {
            return Err(TensorError::ScaleOutOfRange {
                k,
                scales: self.cfg.scales,
            });
        }
        let table = tape.param(store, self.emb);
        let e = tape.select_row(table, k - 1)?;
        let input = tape.concat_last(z_k, e)?;
        let w1 = tape.param(store, self.mlp_w1);
        let b1 = tape.param(store, self.mlp_b1);
        let w2 = tape.param(store, self.mlp_w2);
        let b2 = tape.param(store, self.mlp_b2);
        let h = tape.linear(input, w1, Some(b1))?;
        let h = tape.silu(h);
        tape.linear(h, w2, Some(b2))
    }

    /// Graph-attention weights over the fully connected scale graph for the
    /// current latents (rows sum to 1).
    fn attention_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        wz: Var,
    ) -> Result<Var, TensorError> {
        let a_src = tape.param(store, self.gat_a_src);
        let a_dst = tape.param(store, self.gat_a_dst);
        let k = tape.value(wz).shape()[0];
        let s_src = tape.linear(wz, a_src, None)?; // [K, 1]
        let s_src = tape.reshape(s_src, &[k])?;
        let s_dst = tape.linear(wz, a_dst, None)?;
        let s_dst = tape.reshape(s_dst, &[k])?;
        let logits = tape.outer_sum(s_src, s_dst)?; // [K, K], row = attending node
        let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
        tape.softmax_rows(logits)
    }

    /// Cross-scale derivative contributions: attention-weighted sums of the
    /// linearly transformed neighbor states, one row per node.
    pub fn interaction(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
    ) -> Result<Var, TensorError> {
        let w = tape.param(store, self.gat_w);
        let wz = tape.linear(z, w, None)?; // [K, d]
        let att = self.attention_weights(tape, store, wz)?;
        tape.matmul(att, wz)
    }

    /// dZ/dt: per node the self-dynamics plus (unless ablated) the
    /// interaction term.
    pub fn ode_rhs(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var, TensorError> {
        let mut rows = Vec::with_capacity(self.cfg.scales);
        for k in 1..=self.cfg.scales {
            let zk = tape.select_row(z, k - 1)?;
            rows.push(self.self_dynamics(tape, store, zk, k)?);
        }
        let own = tape.stack_rows(&rows)?;
        if self.interaction_enabled {
            let inter = self.interaction(tape, store, z)?;
            tape.add(own, inter)
        } else {
            Ok(own)
        }
    }

    /// RK4 integration of the latent state on the tape; gradients flow
    /// through every stage.
    pub fn integrate_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z0: Var,
        tau: f32,
        steps: usize,
    ) -> Result<Var, TensorError> {
        let mut rhs = |t: &mut Tape, z: Var| self.ode_rhs(t, store, z);
        rk4_integrate_tape(tape, z0, tau, steps, &mut rhs)
    }

    /// Derivative evaluated on a scratch tape (inference path).
    pub fn rhs_tensor(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = self.ode_rhs(&mut tape, store, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Integrate without recording gradients, using the configured solver.
    pub fn integrate(
        &self,
        store: &ParamStore,
        z0: &Tensor,
        tau: f32,
        solver: &SolverConfig,
    ) -> Result<Tensor, TrainError> {
        match &solver.method {
            SolverMethod::Rk4 { steps_per_unit } => {
                if tau == 0.0 {
                    return Ok(z0.clone());
                }
                let steps = ((tau.abs() * *steps_per_unit as f32).ceil() as usize).max(1);
                let mut tape = Tape::new();
                let zv = tape.constant(z0.clone());
                let out = self.integrate_tape(&mut tape, store, zv, tau, steps)?;
                Ok(tape.value(out).clone())
            }
            SolverMethod::Dopri5(cfg) => {
                let shape = z0.shape().to_vec();
                let y0: Vec<f64> = z0.data().iter().map(|&v| v as f64).collect();
                let mut rhs = |y: &[f64]| {
                    let z = Tensor::new(&shape, y.iter().map(|&v| v as f32).collect())
                        .expect("state shape");
                    let d = self.rhs_tensor(store, &z).expect("rhs eval");
                    d.data().iter().map(|&v| v as f64).collect()
                };
                let y = dopri5_integrate(&y0, tau as f64, cfg, &mut rhs)?;
                Ok(Tensor::new(&shape, y.iter().map(|&v| v as f32).collect())
                    .expect("state shape"))
            }
        }
    }

    /// Continuous trajectory with readouts at ascending times.
    pub fn integrate_path(
        &self,
        store: &ParamStore,
        z0: &Tensor,
        times: &[f32],
        solver: &SolverConfig,
    ) -> Result<Vec<Tensor>, TrainError> {
        let mut out = Vec::with_capacity(times.len());
        let mut state = z0.clone();
        let mut t = 0.0f32;
        for &target in times {
            debug_assert!(target >= t, "readout times must ascend");
            if target > t {
                state = self.integrate(store, &state, target - t, solver)?;
                t = target;
            }
            out.push(state.clone());
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum SolverMethod {
    Rk4 { steps_per_unit: usize },
    Dopri5(Dopri5Config),
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub method: SolverMethod,
}

impl SolverConfig {
    pub fn rk4(steps_per_unit: usize) -> Self {
        Self {
            method: SolverMethod::Rk4 { steps_per_unit },
        }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            method: SolverMethod::Dopri5(Dopri5Config {
                rtol,
                atol,
                max_steps: 100_000,
            }),
        }
    }
}

/// Classic fixed-step RK4 recorded on a tape.
pub fn rk4_integrate_tape(
    tape: &mut Tape,
    z0: Var,
    t_span: f32,
    steps: usize,
    rhs: &mut dyn FnMut(&mut Tape, Var) -> Result<Var, TensorError>,
) -> Result<Var, TensorError> {
    if t_span == 0.0 {
        return Ok(z0);
    }
    assert!(steps >= 1, "rk4 needs at least one step");
    let h = t_span / steps as f32;
    let mut z = z0;
    for _ in 0..steps {
        let k1 = rhs(tape, z)?;
        let half1 = tape.mul_scalar(k1, 0.5 * h);
        let z1 = tape.add(z, half1)?;
        let k2 = rhs(tape, z1)?;
        let half2 = tape.mul_scalar(k2, 0.5 * h);
        let z2 = tape.add(z, half2)?;
        let k3 = rhs(tape, z2)?;
        let full3 = tape.mul_scalar(k3, h);
        let z3 = tape.add(z, full3)?;
        let k4 = rhs(tape, z3)?;
        // z + h/6 (k1 + 2 k2 + 2 k3 + k4)
        let k2x2 = tape.mul_scalar(k2, 2.0);
        let k3x2 = tape.mul_scalar(k3, 2.0);
        let s = tape.add(k1, k2x2)?;
        let s = tape.add(s, k3x2)?;
        let s = tape.add(s, k4)?;
        let inc = tape.mul_scalar(s, h / 6.0);
        z = tape.add(z, inc)?;
    }
    Ok(z)
}

#[derive(Clone, Debug)]
pub struct Dopri5Config {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

/// Adaptive Dormand-Prince 5(4) in f64 with a standard step controller.
pub fn dopri5_integrate(
    y0: &[f64],
    t_span: f64,
    cfg: &Dopri5Config,
    rhs: &mut dyn FnMut(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>, TrainError> {
    if t_span == 0.0 {
        return Ok(y0.to_vec());
    }
    assert!(t_span > 0.0, "dopri5 integrates forward");
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0f64;
    let mut h = (t_span / 100.0).min(t_span);
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    let mut steps = 0usize;
    while t < t_span {
        if steps >= cfg.max_steps {
            return Err(TrainError::SolverMaxSteps {
                max_steps: cfg.max_steps,
            });
        }
        steps += 1;
        h = h.min(t_span - t);
        k.clear();
        k.push(rhs(&y));
        for s in 0..6 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..dim {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k.push(rhs(&ys));
        }
        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for (j, kj) in k.iter().enumerate() {
            for i in 0..dim {
                y5[i] += h * B5[j] * kj[i];
                y4[i] += h * B4[j] * kj[i];
            }
        }
        // weighted RMS error norm
        let mut err = 0.0f64;
        for i in 0..dim {
            let sc = cfg.atol + cfg.rtol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4[i]) / sc;
            err += e * e;
        }
        let err = (err / dim as f64).sqrt();
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
    }
    Ok(y)
}

/// Mean squared difference between predicted and encoded latent states.
pub fn pred_loss(tape: &mut Tape, predicted: Var, target: Var) -> Result<Var, TensorError> {
    tape.mse(predicted, target)
}
