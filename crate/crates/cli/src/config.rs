//! Plain key = value run configuration.
//!
//! Every key has a documented default; unknown keys are rejected. Values come
//! from defaults, then an optional `--config <path>` file of `key = value`
//! lines, then `--key value` flags (later wins). The full effective
//! configuration is echoed into every output manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

/// (key, default, documentation)
pub const KEYS: &[(&str, &str, &str)] = &[
    ("system", "bruss", "system tag: lo | bruss | gs | cylinder"),
    ("height", "32", "grid height in cells"),
    ("width", "32", "grid width in cells"),
    ("dx", "auto", "physical length per cell (auto: per-system default)"),
    ("n_traj", "12", "trajectories to simulate"),
    ("seed", "0", "base seed for simulation/training/sampling"),
    ("out", "out", "output directory"),
    ("mu_u", "auto", "diffusion coefficient of u (auto: per-system)"),
    ("mu_v", "auto", "diffusion coefficient of v (auto: per-system)"),
    ("alpha", "auto", "reaction coefficient alpha (auto: per-system)"),
    ("beta", "auto", "reaction coefficient beta (auto: per-system)"),
    ("dt", "auto", "snapshot interval (auto: per-system)"),
    ("t_end", "auto", "physical horizon (auto: per-system)"),
    ("downsample", "auto", "keep every n-th snapshot (auto: per-system)"),
    ("substeps", "auto", "internal Euler steps per snapshot (auto: per-system)"),
    ("re", "100", "cylinder flow Reynolds number"),
    ("rho", "1", "cylinder flow density"),
    ("u_max", "0.08", "cylinder inflow speed (lattice units)"),
    ("diameter", "0.2", "cylinder diameter (physical units)"),
    ("warmup", "2000", "lattice steps before recording starts"),
    ("cyl_snapshots", "100", "cylinder snapshots to record"),
    ("cyl_downsample", "300", "lattice steps between cylinder snapshots"),
    ("scales", "3", "scale count K"),
    ("latent_dim", "16", "latent dimension d per scale"),
    ("diffusion_steps", "100", "total diffusion steps N"),
    ("allocation", "uniform", "stage weights like 1:4:9 (uniform: equal)"),
    ("stage_mode", "global", "stage noise interpretation: global | literal"),
    ("factor_mode", "linear", "scale-to-pool-factor map: linear | pow2"),
    ("beta_start", "0.0001", "noise ramp start"),
    (
        "beta_end",
        "0.1",
        "noise ramp end (0.02 at the 1000-step scale; rescaled for short schedules)",
    ),
    ("scale_preset", "desk", "width preset: desk | paper"),
    ("groups", "4", "group-norm group count"),
    ("solver", "rk4", "latent ODE solver: rk4 | dopri5"),
    ("steps_per_unit", "1", "RK4 steps per latent time unit"),
    ("rtol", "1e-6", "dopri5 relative tolerance"),
    ("atol", "1e-8", "dopri5 absolute tolerance"),
    ("epochs_pretrain", "30", "stage-1 epochs"),
    (
        "encoder_warmup",
        "auto",
        "stage-1 epochs with the encoder frozen (auto: half of epochs_pretrain)",
    ),
    ("epochs_e2e", "20", "stage-2 epochs"),
    ("steps_per_epoch", "10", "optimizer steps per epoch"),
    ("batch", "6", "batch size"),
    ("lr", "0.0001", "learning rate"),
    ("lambda", "1", "weight of the prediction loss in stage 2"),
    ("interval", "5", "prediction interval in snapshot steps"),
    ("horizon_intervals", "2", "training pairs span up to interval*this"),
    ("train_noise", "0", "relative Gaussian noise added to training snapshots"),
    ("split_seed", "0", "seed of the 8:2 train/validation split"),
    ("dataset", "", "input dataset path (.mdpt)"),
    (
        "stats_from",
        "",
        "dataset whose manifest provides the normalization stats (test-set path)",
    ),
    ("checkpoint", "", "checkpoint path prefix"),
    ("truth", "", "ground-truth dataset path for evaluation"),
    ("predictions", "", "predictions path for evaluation"),
    ("horizon", "auto", "rollout horizon in snapshot steps (auto: full trajectory)"),
    ("stride", "5", "rollout readout stride in snapshot steps"),
    ("images", "true", "emit portable-graymap snapshots on predict"),
    ("ablate", "", "ablation selector: a | b | c | d"),
    ("noise_levels", "0:0.1:0.3", "training-noise levels for ablation c"),
    (
        "latent_noise_levels",
        "0:0.1:0.3:1.0",
        "latent perturbation levels for ablation d",
    ),
    ("steps_per_scale", "30", "diffusion steps per scale for ablation a"),
    ("kmax", "5", "largest scale count for ablation a"),
    ("ablate_seeds", "3", "training seeds per setting for ablations a/b"),
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::new("config", msg)
}

impl RunConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .map(|(k, d, _)| (k.to_string(), d.to_string()))
            .collect();
        Self { values }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.replace('-', "_");
        if !self.values.contains_key(&key) {
            return Err(config_err(format!("unknown key '{key}'")));
        }
        self.values.insert(key, value.to_string());
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} missing from table"))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, CliError> {
        self.get(key)
            .parse()
            .map_err(|_| config_err(format!("key '{key}' needs an unsigned integer, got '{}'", self.get(key))))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, CliError> {
        self.get(key)
            .parse()
            .map_err(|_| config_err(format!("key '{key}' needs an unsigned integer, got '{}'", self.get(key))))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, CliError> {
        self.get(key)
            .parse()
            .map_err(|_| config_err(format!("key '{key}' needs a number, got '{}'", self.get(key))))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(config_err(format!("key '{key}' needs true/false, got '{other}'"))),
        }
    }

    pub fn get_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let v = self.get(key);
        if v.is_empty() {
            return Err(config_err(format!("key '{key}' (path) is required")));
        }
        Ok(PathBuf::from(v))
    }

    /// f64 value with a per-system fallback when set to `auto`.
    pub fn get_f64_auto(&self, key: &str, auto: f64) -> Result<f64, CliError> {
        if self.get(key) == "auto" {
            Ok(auto)
        } else {
            self.get_f64(key)
        }
    }

    pub fn get_usize_auto(&self, key: &str, auto: usize) -> Result<usize, CliError> {
        if self.get(key) == "auto" {
            Ok(auto)
        } else {
            self.get_usize(key)
        }
    }

    /// Full effective configuration, one `key = value` line per key.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Stage allocation weights for K scales.
    pub fn allocation(&self, scales: usize) -> Result<Vec<f64>, CliError> {
        let raw = self.get("allocation");
        if raw == "uniform" {
            return Ok(vec![1.0; scales]);
        }
        let weights: Vec<f64> = raw
            .split(':')
            .map(|s| s.parse().map_err(|_| config_err(format!("bad allocation weight '{s}'"))))
            .collect::<Result<_, _>>()?;
        if weights.len() != scales {
            return Err(config_err(format!(
                "allocation has {} weights but scales = {scales}",
                weights.len()
            )));
        }
        Ok(weights)
    }

    /// Colon-separated f64 list.
    pub fn get_levels(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.get(key)
            .split(':')
            .map(|s| s.parse().map_err(|_| config_err(format!("bad level '{s}' in {key}"))))
            .collect()
    }
}

/// Render the key table for `--help`.
pub fn help_table() -> String {
    let mut out = String::new();
    for (k, d, doc) in KEYS {
        out.push_str(&format!("  --{k:<20} {doc} [default: {d}]\n"));
    }
    out
}
