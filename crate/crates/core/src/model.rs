//! The assembled model: encoder, conditional UNet, latent dynamics, and the
//! diffusion schedules, all over one parameter store.

use crate::codec::{EncoderConfig, FactorMode, ResidualEncoder};
use crate::diffusion::{
    make_schedule, make_stage_schedule, reverse_sample, CondUNet, LatentState, ModelDenoiser,
    NoiseSchedule, StageMode, StageSchedule, UNetConfig,
};
use crate::error::{TensorError, TrainError};
use crate::gnode::{GnodeConfig, GraphDynamics, SolverConfig};
use crate::rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor};

/// Everything needed to rebuild a model deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Scale count K.
    pub scales: usize,
    /// Latent dimension d per scale.
    pub latent_dim: usize,
    /// Total diffusion steps N.
    pub diffusion_steps: usize,
    /// Stage allocation weights, finest scale first.
    pub allocation: Vec<f64>,
    pub stage_mode: StageMode,
    pub factor_mode: FactorMode,
    pub in_channels: usize,
    pub grid: (usize, usize),
    pub enc_channels: [usize; 2],
    pub unet_channels: [usize; 3],
    pub groups: usize,
    pub time_dim: usize,
    pub time_hidden: usize,
    pub gnode_hidden: usize,
    pub gnode_embed: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Cross-scale interaction term enabled (ablation switch).
    pub interaction: bool,
    /// RK4 steps per latent time unit during training and rollout.
    pub solver_steps_per_unit: usize,
    /// Seed used for parameter initialization.
    pub init_seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: K = 3, d = 16, N = 100 uniform stages,
    /// channels [16, 32] / [16, 32, 32]. The noise ramp end is rescaled to
    /// the short schedule (0.02 * 1000 / N) so the terminal cumulative
    /// product actually reaches the standard-normal regime reverse sampling
    /// starts from.
    pub fn desk(in_channels: usize, grid: (usize, usize)) -> Self {
        Self {
            scales: 3,
            latent_dim: 16,
            diffusion_steps: 100,
            allocation: vec![1.0, 1.0, 1.0],
            stage_mode: StageMode::Global,
            factor_mode: FactorMode::Linear,
            in_channels,
            grid,
            enc_channels: [16, 32],
            unet_channels: [16, 32, 32],
            groups: 4,
            time_dim: 32,
            time_hidden: 64,
            gnode_hidden: 32,
            gnode_embed: 8,
            beta_start: 1e-4,
            beta_end: 0.1,
            interaction: true,
            solver_steps_per_unit: 1,
            init_seed: 0,
        }
    }

    /// Key-value form for manifests and checkpoints.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let alloc = self
            .allocation
            .iter()
            .map(|w| format!("{w}"))
            .collect::<Vec<_>>()
            .join(":");
        vec![
            ("scales".into(), self.scales.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("diffusion_steps".into(), self.diffusion_steps.to_string()),
            ("allocation".into(), alloc),
            ("stage_mode".into(), self.stage_mode.name().into()),
            ("factor_mode".into(), self.factor_mode.name().into()),
            ("in_channels".into(), self.in_channels.to_string()),
            ("grid_h".into(), self.grid.0.to_string()),
            ("grid_w".into(), self.grid.1.to_string()),
            ("enc_c1".into(), self.enc_channels[0].to_string()),
            ("enc_c2".into(), self.enc_channels[1].to_string()),
            ("unet_c0".into(), self.unet_channels[0].to_string()),
            ("unet_c1".into(), self.unet_channels[1].to_string()),
            ("unet_c2".into(), self.unet_channels[2].to_string()),
            ("groups".into(), self.groups.to_string()),
            ("time_dim".into(), self.time_dim.to_string()),
            ("time_hidden".into(), self.time_hidden.to_string()),
            ("gnode_hidden".into(), self.gnode_hidden.to_string()),
            ("gnode_embed".into(), self.gnode_embed.to_string()),
            ("beta_start".into(), format!("{:e}", self.beta_start)),
            ("beta_end".into(), format!("{:e}", self.beta_end)),
            ("interaction".into(), self.interaction.to_string()),
            (
                "solver_steps_per_unit".into(),
                self.solver_steps_per_unit.to_string(),
            ),
            ("init_seed".into(), self.init_seed.to_string()),
        ]
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self, TensorError> {
        let get = |key: &str| -> Result<&str, TensorError> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| TensorError::Invalid(format!("missing config key {key}")))
        };
        let parse_usize = |key: &str| -> Result<usize, TensorError> {
            get(key)?
                .parse()
                .map_err(|_| TensorError::Invalid(format!("bad usize for {key}")))
        };
        let parse_f64 = |key: &str| -> Result<f64, TensorError> {
            get(key)?
                .parse()
                .map_err(|_| TensorError::Invalid(format!("bad float for {key}")))
        };
        let allocation: Vec<f64> = get("allocation")?
            .split(':')
            .map(|s| {
                s.parse()
                    .map_err(|_| TensorError::Invalid("bad allocation weight".into()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            scales: parse_usize("scales")?,
            latent_dim: parse_usize("latent_dim")?,
            diffusion_steps: parse_usize("diffusion_steps")?,
            allocation,
            stage_mode: StageMode::parse(get("stage_mode")?)
                .ok_or_else(|| TensorError::Invalid("bad stage_mode".into()))?,
            factor_mode: FactorMode::parse(get("factor_mode")?)
                .ok_or_else(|| TensorError::Invalid("bad factor_mode".into()))?,
            in_channels: parse_usize("in_channels")?,
            grid: (parse_usize("grid_h")?, parse_usize("grid_w")?),
            enc_channels: [parse_usize("enc_c1")?, parse_usize("enc_c2")?],
            unet_channels: [
                parse_usize("unet_c0")?,
                parse_usize("unet_c1")?,
                parse_usize("unet_c2")?,
            ],
            groups: parse_usize("groups")?,
            time_dim: parse_usize("time_dim")?,
            time_hidden: parse_usize("time_hidden")?,
            gnode_hidden: parse_usize("gnode_hidden")?,
            gnode_embed: parse_usize("gnode_embed")?,
            beta_start: parse_f64("beta_start")?,
            beta_end: parse_f64("beta_end")?,
            interaction: get("interaction")? == "true",
            solver_steps_per_unit: parse_usize("solver_steps_per_unit")?,
            init_seed: parse_usize("init_seed")? as u64,
        })
    }
}

/// Assembled model over one parameter store.
pub struct MdpModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: ResidualEncoder,
    pub unet: CondUNet,
    pub dynamics: GraphDynamics,
    pub schedule: NoiseSchedule,
    pub stages: StageSchedule,
}

impl MdpModel {
    pub fn init(mut cfg: ModelConfig, seed: u64) -> Result<Self, TensorError> {
        cfg.init_seed = seed;
        let mut rng = rng::substream(seed, 0x494e4954); // "INIT"
        let mut store = ParamStore::new();
        let encoder = ResidualEncoder::init(
            &mut store,
            EncoderConfig {
                in_channels: cfg.in_channels,
                channels: cfg.enc_channels,
                latent_dim: cfg.latent_dim,
                scales: cfg.scales,
                groups: cfg.groups,
                grid: cfg.grid,
            },
            &mut rng,
        );
        let unet = CondUNet::init(
            &mut store,
            UNetConfig {
                in_channels: cfg.in_channels,
                channels: cfg.unet_channels,
                cond_dim: cfg.latent_dim,
                time_dim: cfg.time_dim,
                time_hidden: cfg.time_hidden,
                groups: cfg.groups,
            },
            &mut rng,
        );
        let mut dynamics = GraphDynamics::init(
            &mut store,
            GnodeConfig {
                latent_dim: cfg.latent_dim,
                scales: cfg.scales,
                embed_dim: cfg.gnode_embed,
                hidden: cfg.gnode_hidden,
            },
            &mut rng,
        );
        dynamics.interaction_enabled = cfg.interaction;
        let schedule = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)?;
        let mut stages = make_stage_schedule(cfg.diffusion_steps, cfg.scales, &cfg.allocation)?;
        stages.mode = cfg.stage_mode;
        Ok(Self {
            cfg,
            store,
            encoder,
            unet,
            dynamics,
            schedule,
            stages,
        })
    }

    /// Parameter ids of the autoencoder half (encoder + UNet).
    pub fn autoencoder_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| {
                let n = self.store.name(id);
                n.starts_with("enc.") || n.starts_with("unet.")
            })
            .collect()
    }

    /// Parameter ids of the latent predictor.
    pub fn predictor_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("gnode."))
            .collect()
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig::rk4(self.cfg.solver_steps_per_unit)
    }

    /// Encode a snapshot into its per-scale latent state (no gradients).
    pub fn encode_latent_state(&self, x: &Tensor, tau: f32) -> Result<LatentState, TensorError> {
        let mut tape = Tape::new();
        let vars = self
            .encoder
            .encode_all(&mut tape, &self.store, x, self.cfg.factor_mode)?;
        let rows: Vec<Tensor> = vars.iter().map(|&v| tape.value(v).clone()).collect();
        LatentState::new(Tensor::from_rows(&rows)?, tau)
    }

    /// Sample a snapshot conditioned on a latent state.
    pub fn decode(&self, z: &LatentState, seed: u64) -> Result<Tensor, TrainError> {
        let mut den = ModelDenoiser {
            store: &self.store,
            unet: &self.unet,
        };
        let shape = [self.cfg.in_channels, self.cfg.grid.0, self.cfg.grid.1];
        let (sample, _) = reverse_sample(&mut den, z, &self.schedule, &self.stages, &shape, seed)?;
        Ok(sample)
    }
}
