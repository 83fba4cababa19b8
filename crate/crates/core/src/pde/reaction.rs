//! Two-component reaction-diffusion systems on periodic grids.
//!
//! Explicit Euler in f64 with an optional substep count: the configured `dt`
//! is the snapshot interval, each snapshot advancing `substeps` internal Euler
//! steps of size `dt / substeps`. The default coefficients follow the
//! benchmark settings of each system.

use super::{Boundary, GridSpec, SimMeta, Trajectory};
use crate::error::SimError;
use crate::rng;
use crate::tensor::Tensor;

const BLOW_UP_LIMIT: f64 = 1e6;

/// Which two-component system the reaction terms implement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RdKind {
    /// du = (1 - u^2 - v^2) u + beta (u^2 + v^2) v
    /// dv = (1 - u^2 - v^2) v - beta (u^2 + v^2) u
    LambdaOmega,
    /// du = alpha - (1 + beta) u + u^2 v
    /// dv = beta u - u^2 v
    Brusselator,
    /// du = -u v^2 + alpha (1 - u)
    /// dv =  u v^2 - beta v
    GrayScott,
}

impl RdKind {
    pub fn name(&self) -> &'static str {
        match self {
            RdKind::LambdaOmega => "lambda_omega",
            RdKind::Brusselator => "brusselator",
            RdKind::GrayScott => "gray_scott",
        }
    }

    fn reaction(&self, u: f64, v: f64, alpha: f64, beta: f64) -> (f64, f64) {
        match self {
            RdKind::LambdaOmega => {
                let r2 = u * u + v * v;
                ((1.0 - r2) * u + beta * r2 * v, (1.0 - r2) * v - beta * r2 * u)
            }
            RdKind::Brusselator => {
                let uuv = u * u * v;
                (alpha - (1.0 + beta) * u + uuv, beta * u - uuv)
            }
            RdKind::GrayScott => {
                let uvv = u * v * v;
                (-uvv + alpha * (1.0 - u), uvv - beta * v)
            }
        }
    }
}

/// Reaction-diffusion simulation settings.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub system: RdKind,
    pub grid: GridSpec,
    pub mu_u: f64,
    pub mu_v: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Snapshot interval.
    pub dt: f64,
    /// Physical horizon; `round(t_end / dt)` snapshots are produced.
    pub t_end: f64,
    /// Keep every n-th snapshot.
    pub downsample: usize,
    /// Internal Euler steps per snapshot interval.
    pub substeps: usize,
    pub seed: u64,
    /// Diffusion-only mode when false (verification hook).
    pub reaction: bool,
}

impl SimConfig {
    /// mu = 0.1/0.1, beta = 1.0, dt = 0.04, T = 40, 64x64, time / 10.
    pub fn lambda_omega() -> Self {
        Self {
            system: RdKind::LambdaOmega,
            grid: GridSpec::periodic(64, 64, 20.0 / 64.0).expect("default grid"),
            mu_u: 0.1,
            mu_v: 0.1,
            alpha: 0.0,
            beta: 1.0,
            dt: 0.04,
            t_end: 40.0,
            downsample: 10,
            substeps: 1,
            seed: 0,
            reaction: true,
        }
    }

    /// mu = 1.0/0.1, alpha = 1.0, beta = 3.0, dt = 0.02, T = 20, 64x64, time / 10.
    pub fn brusselator() -> Self {
        Self {
            system: RdKind::Brusselator,
            grid: GridSpec::periodic(64, 64, 0.5).expect("default grid"),
            mu_u: 1.0,
            mu_v: 0.1,
            alpha: 1.0,
            beta: 3.0,
            dt: 0.02,
            t_end: 20.0,
            downsample: 10,
            substeps: 1,
            seed: 0,
            reaction: true,
        }
    }

    /// mu = 2e-5/1e-5, alpha = 0.04, beta = 0.1, dt = 50, T = 5e3, 100x100.
    ///
    /// Explicit Euler is unstable at dt = 50 for these reaction rates, so the
    /// snapshot interval is advanced in 200 internal substeps.
    pub fn gray_scott() -> Self {
        Self {
            system: RdKind::GrayScott,
            grid: GridSpec::periodic(100, 100, 0.025).expect("default grid"),
            mu_u: 2e-5,
            mu_v: 1e-5,
            alpha: 0.04,
            beta: 0.1,
            dt: 50.0,
            t_end: 5e3,
            downsample: 1,
            substeps: 200,
            seed: 0,
            reaction: true,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.dt <= 0.0 || self.t_end <= 0.0 {
            return Err(SimError::BadConfig(format!(
                "dt = {} and t_end = {} must be positive",
                self.dt, self.t_end
            )));
        }
        if self.substeps == 0 || self.downsample == 0 {
            return Err(SimError::BadConfig(
                "substeps and downsample must be >= 1".into(),
            ));
        }
        if self.grid.boundary != Boundary::Periodic {
            return Err(SimError::BadConfig(
                "reaction-diffusion systems use periodic boundaries".into(),
            ));
        }
        Ok(())
    }

    fn meta(&self) -> SimMeta {
        SimMeta {
            system: self.system.name().into(),
            seed: self.seed,
            entries: vec![
                ("mu_u".into(), format!("{}", self.mu_u)),
                ("mu_v".into(), format!("{}", self.mu_v)),
                ("alpha".into(), format!("{}", self.alpha)),
                ("beta".into(), format!("{}", self.beta)),
                ("dt".into(), format!("{}", self.dt)),
                ("t_end".into(), format!("{}", self.t_end)),
                ("downsample".into(), format!("{}", self.downsample)),
                ("substeps".into(), format!("{}", self.substeps)),
                ("grid".into(), format!("{}x{}", self.grid.height, self.grid.width)),
                ("dx".into(), format!("{}", self.grid.dx)),
            ],
        }
    }
}

/// 5-point periodic Laplacian scaled by `1/dx^2`.
pub fn laplacian_periodic(field: &[f64], h: usize, w: usize, dx: f64) -> Vec<f64> {
    let inv = 1.0 / (dx * dx);
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        let up = if y == 0 { h - 1 } else { y - 1 };
        let down = if y == h - 1 { 0 } else { y + 1 };
        for x in 0..w {
            let left = if x == 0 { w - 1 } else { x - 1 };
            let right = if x == w - 1 { 0 } else { x + 1 };
            let c = field[y * w + x];
            out[y * w + x] = (field[up * w + x] + field[down * w + x] + field[y * w + left]
                + field[y * w + right]
                - 4.0 * c)
                * inv;
        }
    }
    out
}

/// Initial fields for one system, f64, flattened `[u..., v...]` pair.
pub fn initial_state(cfg: &SimConfig) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (cfg.grid.height, cfg.grid.width);
    let mut rng = rng::substream(cfg.seed, 0x4943); // "IC"
    match cfg.system {
        RdKind::LambdaOmega => {
            let u = smooth_noise(&mut rng, h, w, 0.8);
            let v = smooth_noise(&mut rng, h, w, 0.8);
            (u, v)
        }
        RdKind::Brusselator => {
            let base_u = cfg.alpha;
            let base_v = cfg.beta / cfg.alpha;
            let du = smooth_noise(&mut rng, h, w, 0.1);
            let dv = smooth_noise(&mut rng, h, w, 0.1);
            (
                du.iter().map(|d| base_u + d).collect(),
                dv.iter().map(|d| base_v + d).collect(),
            )
        }
        RdKind::GrayScott => {
            let mut u = vec![1.0f64; h * w];
            let mut v = vec![0.0f64; h * w];
            // a few seeded square perturbations on the trivial state
            let squares = 3 + (rng::uniform(&mut rng, 0.0, 3.0) as usize);
            for _ in 0..squares {
                let cy = rng::uniform(&mut rng, 0.0, h as f64) as usize % h;
                let cx = rng::uniform(&mut rng, 0.0, w as f64) as usize % w;
                let half = (h.min(w) / 10).max(1);
                for dy in 0..2 * half {
                    for dx in 0..2 * half {
                        let y = (cy + dy) % h;
                        let x = (cx + dx) % w;
                        u[y * w + x] = 0.5;
                        v[y * w + x] = 0.25;
                    }
                }
            }
            (u, v)
        }
    }
}

/// Low-pass-filtered Gaussian noise scaled to roughly `amplitude`.
fn smooth_noise(rng: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize, amplitude: f64) -> Vec<f64> {
    let mut field: Vec<f64> = (0..h * w).map(|_| rng::normal(rng)).collect();
    let mut buf = vec![0.0f64; h * w];
    for _ in 0..8 {
        for y in 0..h {
            let up = if y == 0 { h - 1 } else { y - 1 };
            let down = if y == h - 1 { 0 } else { y + 1 };
            for x in 0..w {
                let left = if x == 0 { w - 1 } else { x - 1 };
                let right = if x == w - 1 { 0 } else { x + 1 };
                buf[y * w + x] = 0.2
                    * (field[y * w + x]
                        + field[up * w + x]
                        + field[down * w + x]
                        + field[y * w + left]
                        + field[y * w + right]);
            }
        }
        std::mem::swap(&mut field, &mut buf);
    }
    let max = field.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let scale = amplitude / max;
    field.iter_mut().for_each(|v| *v *= scale);
    field
}

/// Run the explicit-Euler engine from a given initial state.
pub fn simulate_from(
    cfg: &SimConfig,
    mut u: Vec<f64>,
    mut v: Vec<f64>,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let (h, w) = (cfg.grid.height, cfg.grid.width);
    assert_eq!(u.len(), h * w);
    assert_eq!(v.len(), h * w);
    let snapshots = (cfg.t_end / cfg.dt).round() as usize;
    if snapshots == 0 {
        return Err(SimError::BadConfig("horizon shorter than dt".into()));
    }
    let dt_sub = cfg.dt / cfg.substeps as f64;
    let mut states = Vec::with_capacity(snapshots);
    for snap in 0..snapshots {
        record(&mut states, &u, &v, h, w, snap)?;
        for _ in 0..cfg.substeps {
            euler_step(cfg, &mut u, &mut v, h, w, dt_sub);
        }
    }
    Ok(Trajectory {
        states,
        meta: cfg.meta(),
    })
}

fn euler_step(cfg: &SimConfig, u: &mut Vec<f64>, v: &mut Vec<f64>, h: usize, w: usize, dt: f64) {
    let lap_u = laplacian_periodic(u, h, w, cfg.grid.dx);
    let lap_v = laplacian_periodic(v, h, w, cfg.grid.dx);
    for i in 0..h * w {
        let (ru, rv) = if cfg.reaction {
            cfg.system.reaction(u[i], v[i], cfg.alpha, cfg.beta)
        } else {
            (0.0, 0.0)
        };
        u[i] += dt * (cfg.mu_u * lap_u[i] + ru);
        v[i] += dt * (cfg.mu_v * lap_v[i] + rv);
    }
}

fn record(
    states: &mut Vec<Tensor>,
    u: &[f64],
    v: &[f64],
    h: usize,
    w: usize,
    step: usize,
) -> Result<(), SimError> {
    let mut max_abs = 0.0f64;
    let mut data = Vec::with_capacity(2 * h * w);
    for &x in u.iter().chain(v.iter()) {
        if !x.is_finite() || x.abs() > BLOW_UP_LIMIT {
            return Err(SimError::BlowUp {
                step,
                max_abs: if x.is_finite() { x.abs() } else { f64::INFINITY },
            });
        }
        max_abs = max_abs.max(x.abs());
        data.push(x as f32);
    }
    let _ = max_abs;
    states.push(Tensor::new(&[2, h, w], data).expect("snapshot shape"));
    Ok(())
}

fn run(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    let (u, v) = initial_state(cfg);
    let full = simulate_from(cfg, u, v)?;
    super::downsample_time(&full, cfg.downsample)
}

pub fn simulate_lambda_omega(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    assert_eq!(cfg.system, RdKind::LambdaOmega);
    run(cfg)
}

pub fn simulate_brusselator(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    assert_eq!(cfg.system, RdKind::Brusselator);
    run(cfg)
}

/// Gray-Scott runs on its own simulation grid and is spatially resampled to
/// `target` when the extents differ.
pub fn simulate_gray_scott(cfg: &SimConfig, target: Option<(usize, usize)>) -> Result<Trajectory, SimError> {
    assert_eq!(cfg.system, RdKind::GrayScott);
    let traj = run(cfg)?;
    match target {
        Some((th, tw)) if (th, tw) != (cfg.grid.height, cfg.grid.width) => Ok(Trajectory {
            states: traj
                .states
                .iter()
                .map(|s| resample_snapshot(s, th, tw))
                .collect(),
            meta: traj.meta,
        }),
        _ => Ok(traj),
    }
}

/// Bilinear resampling (either direction) with half-pixel centers.
pub fn resample_snapshot(snap: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = (snap.shape()[0], snap.shape()[1], snap.shape()[2]);
    let data = snap.data();
    let mut out = vec![0.0f32; c * oh * ow];
    for oy in 0..oh {
        let pos_y = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = pos_y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = pos_y - y0 as f64;
        for ox in 0..ow {
            let pos_x =
                ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = pos_x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = pos_x - x0 as f64;
            for ch in 0..c {
                let base = ch * h * w;
                let top = data[base + y0 * w + x0] as f64 * (1.0 - tx)
                    + data[base + y0 * w + x1] as f64 * tx;
                let bot = data[base + y1 * w + x0] as f64 * (1.0 - tx)
                    + data[base + y1 * w + x1] as f64 * tx;
                out[(ch * oh + oy) * ow + ox] = (top * (1.0 - ty) + bot * ty) as f32;
            }
        }
    }
    Tensor::new(&[c, oh, ow], out).expect("resample shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small(cfg: &mut SimConfig, n: usize, dx: f64) {
        cfg.grid = GridSpec::periodic(n, n, dx).unwrap();
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = vec![3.7f64; 8 * 8];
        let lap = laplacian_periodic(&f, 8, 8, 0.5);
        assert!(lap.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_cell_sum_vanishes_on_periodic_grids() {
        let mut rng = seeded(41);
        let f: Vec<f64> = (0..12 * 10).map(|_| rng::normal(&mut rng)).collect();
        let lap = laplacian_periodic(&f, 12, 10, 0.3);
        let sum: f64 = lap.iter().sum();
        assert!(sum.abs() < 1e-10, "sum {sum}");
    }

    #[test]
    fn laplacian_matches_direct_stencil_on_sine() {
        let (h, w, dx) = (16, 16, 0.25);
        let l = w as f64 * dx;
        let f: Vec<f64> = (0..h * w)
            .map(|i| {
                let x = (i % w) as f64 * dx;
                (std::f64::consts::TAU * x / l).sin()
            })
            .collect();
        let got = laplacian_periodic(&f, h, w, dx);
        // direct stencil oracle, written independently
        let inv = 1.0 / (dx * dx);
        for y in 0..h {
            for x in 0..w {
                let idx = |yy: isize, xx: isize| {
                    let yy = yy.rem_euclid(h as isize) as usize;
                    let xx = xx.rem_euclid(w as isize) as usize;
                    f[yy * w + xx]
                };
                let want = (idx(y as isize - 1, x as isize)
                    + idx(y as isize + 1, x as isize)
                    + idx(y as isize, x as isize - 1)
                    + idx(y as isize, x as isize + 1)
                    - 4.0 * f[y * w + x])
                    * inv;
                assert!((got[y * w + x] - want).abs() <= 1e-12);
            }
        }
        // eigenvalue of the discrete operator on this mode
        let k = std::f64::consts::TAU / l;
        let lambda = -(4.0 / (dx * dx)) * (k * dx / 2.0).sin().powi(2);
        for i in 0..h * w {
            assert!((got[i] - lambda * f[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_omega_homogeneous_unit_circle_rotates() {
        // Non-spatial oracle: on the unit circle r stays 1 and theta' = -beta.
        // Euler inflates r by O(dt^2 beta^2) per step, so a small dt is used.
        let mut cfg = SimConfig::lambda_omega();
        small(&mut cfg, 8, 0.5);
        cfg.dt = 1e-4;
        cfg.t_end = 100.5e-4; // 100 recorded steps
        cfg.downsample = 1;
        let theta0 = 0.7f64;
        let n = cfg.grid.height * cfg.grid.width;
        let traj = simulate_from(&cfg, vec![theta0.cos(); n], vec![theta0.sin(); n]).unwrap();
        assert!(traj.len() >= 100);
        for (i, s) in traj.states.iter().enumerate() {
            let u = s.data()[0] as f64;
            let v = s.data()[n] as f64;
            let r = (u * u + v * v).sqrt();
            assert!((r - 1.0).abs() <= 1e-6, "step {i}: r = {r}");
            let theta = v.atan2(u);
            let want = theta0 - cfg.beta * (i as f64) * cfg.dt;
            let diff = (theta - want + std::f64::consts::PI)
                .rem_euclid(std::f64::consts::TAU)
                - std::f64::consts::PI;
            assert!(diff.abs() < 1e-5, "step {i}: theta error {diff}");
        }
    }

    #[test]
    fn lambda_omega_homogeneous_start_keeps_laplacian_zero() {
        let mut cfg = SimConfig::lambda_omega();
        small(&mut cfg, 8, 0.5);
        cfg.t_end = cfg.dt * 50.0;
        cfg.downsample = 1;
        let n = cfg.grid.height * cfg.grid.width;
        let traj = simulate_from(&cfg, vec![0.3; n], vec![-0.4; n]).unwrap();
        for s in &traj.states {
            let first_u = s.data()[0];
            let first_v = s.data()[n];
            assert!(s.data()[..n].iter().all(|&x| x == first_u));
            assert!(s.data()[n..].iter().all(|&x| x == first_v));
        }
    }

    #[test]
    fn lambda_omega_euler_refinement_is_first_order() {
        // Terminal error against a dt/16 reference halves when dt halves.
        let run_with = |dt: f64| {
            let mut cfg = SimConfig::lambda_omega();
            small(&mut cfg, 8, 0.5);
            cfg.dt = dt;
            cfg.t_end = 0.64;
            cfg.downsample = 1;
            let n = cfg.grid.height * cfg.grid.width;
            let traj = simulate_from(&cfg, vec![0.9; n], vec![0.1; n]).unwrap();
            // advance once more to land exactly on t_end
            let last = traj.states.last().unwrap();
            (last.data()[0] as f64, last.data()[n] as f64)
        };
        let reference = run_with(0.64 / 256.0);
        let coarse = run_with(0.04);
        let fine = run_with(0.02);
        let err = |a: (f64, f64)| ((a.0 - reference.0).powi(2) + (a.1 - reference.1).powi(2)).sqrt();
        let ratio = err(coarse) / err(fine);
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn brusselator_equilibrium_is_fixed() {
        let mut cfg = SimConfig::brusselator();
        small(&mut cfg, 8, 0.5);
        cfg.t_end = cfg.dt * 100.0;
        cfg.downsample = 1;
        let n = cfg.grid.height * cfg.grid.width;
        let (ue, ve) = (cfg.alpha, cfg.beta / cfg.alpha);
        let traj = simulate_from(&cfg, vec![ue; n], vec![ve; n]).unwrap();
        for s in &traj.states {
            for i in 0..n {
                assert!((s.data()[i] as f64 - ue).abs() <= 1e-8);
                assert!((s.data()[n + i] as f64 - ve).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn brusselator_perturbation_grows_when_unstable() {
        // beta = 3 > 1 + alpha^2: the equilibrium is linearly unstable.
        let mut cfg = SimConfig::brusselator();
        small(&mut cfg, 16, 0.5);
        cfg.t_end = cfg.dt * 51.0;
        cfg.downsample = 1;
        cfg.seed = 3;
        let n = cfg.grid.height * cfg.grid.width;
        let (u0, v0) = initial_state(&cfg);
        let traj = simulate_from(&cfg, u0, v0).unwrap();
        let (ue, ve) = (cfg.alpha, cfg.beta / cfg.alpha);
        let norm = |s: &Tensor| {
            let d = s.data();
            let mut acc = 0.0f64;
            for i in 0..n {
                acc += (d[i] as f64 - ue).powi(2) + (d[n + i] as f64 - ve).powi(2);
            }
            acc.sqrt()
        };
        for w in traj.states.windows(2).take(50) {
            assert!(
                norm(&w[1]) > norm(&w[0]),
                "perturbation norm must grow each step"
            );
        }
    }

    #[test]
    fn brusselator_long_horizon_stays_bounded() {
        let mut cfg = SimConfig::brusselator();
        small(&mut cfg, 16, 0.5);
        cfg.seed = 4;
        let traj = simulate_brusselator(&cfg).unwrap();
        assert_eq!(traj.len(), 100);
        for s in &traj.states {
            assert!(s.max_abs() < 10.0);
        }
    }

    #[test]
    fn gray_scott_trivial_state_is_exact_fixed_point() {
        let mut cfg = SimConfig::gray_scott();
        small(&mut cfg, 16, 0.025);
        cfg.t_end = cfg.dt * 100.0;
        cfg.downsample = 1;
        let n = cfg.grid.height * cfg.grid.width;
        let traj = simulate_from(&cfg, vec![1.0; n], vec![0.0; n]).unwrap();
        for s in &traj.states {
            for i in 0..n {
                assert!((s.data()[i] as f64 - 1.0).abs() <= 1e-12);
                assert!((s.data()[n + i] as f64).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gray_scott_states_stay_in_range() {
        let mut cfg = SimConfig::gray_scott();
        small(&mut cfg, 24, 0.025);
        cfg.t_end = cfg.dt * 40.0;
        cfg.seed = 5;
        let traj = simulate_gray_scott(&cfg, None).unwrap();
        for s in &traj.states {
            for &v in s.data() {
                assert!((-0.1..=1.5).contains(&(v as f64)), "value {v} out of range");
            }
        }
    }

    #[test]
    fn gray_scott_diffusion_only_conserves_mass() {
        // Checked on the f64 integrator state: the periodic stencil sums to
        // zero, so each Euler step preserves the cell sum to roundoff.
        let mut cfg = SimConfig::gray_scott();
        small(&mut cfg, 16, 0.025);
        cfg.reaction = false;
        cfg.seed = 6;
        let (h, w) = (cfg.grid.height, cfg.grid.width);
        let (mut u, mut v) = initial_state(&cfg);
        let sum0: f64 = u.iter().sum();
        let dt_sub = cfg.dt / cfg.substeps as f64;
        for _ in 0..200 {
            euler_step(&cfg, &mut u, &mut v, h, w, dt_sub);
            let sum: f64 = u.iter().sum();
            assert!(
                (sum - sum0).abs() <= 1e-10 * sum0.abs().max(1.0),
                "drift {}",
                sum - sum0
            );
        }
    }

    #[test]
    fn simulators_are_deterministic_per_seed() {
        let mut cfg = SimConfig::brusselator();
        small(&mut cfg, 8, 0.5);
        cfg.t_end = 2.0;
        cfg.seed = 99;
        let a = simulate_brusselator(&cfg).unwrap();
        let b = simulate_brusselator(&cfg).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let mut cfg = SimConfig::brusselator();
        small(&mut cfg, 8, 0.5);
        cfg.dt = 2.0; // grossly unstable
        cfg.t_end = 200.0;
        cfg.downsample = 1;
        let n = cfg.grid.height * cfg.grid.width;
        let err = simulate_from(&cfg, vec![2.0; n], vec![4.0; n]).unwrap_err();
        assert!(matches!(err, SimError::BlowUp { .. }), "{err:?}");
    }

    #[test]
    fn gray_scott_resamples_to_target_grid() {
        let mut cfg = SimConfig::gray_scott();
        small(&mut cfg, 20, 0.025);
        cfg.t_end = cfg.dt * 5.0;
        let traj = simulate_gray_scott(&cfg, Some((12, 12))).unwrap();
        assert_eq!(traj.states[0].shape(), &[2, 12, 12]);
    }
}
