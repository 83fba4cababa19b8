//! The five commands behind the CLI.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

use mdpnet_core::diffusion::{LatentState, StageMode};
use mdpnet_core::io::{
    manifest_path, minmax_normalize, read_dataset, split_train_valid, write_tensor_file, Dataset,
};
use mdpnet_core::metrics::{aggregate, nmse, pearson, ssim};
use mdpnet_core::model::{MdpModel, ModelConfig};
use mdpnet_core::pde::{
    simulate_brusselator, simulate_cylinder_lbm, simulate_gray_scott, simulate_lambda_omega,
    CylinderConfig, GridSpec, RdKind, SimConfig, Trajectory,
};
use mdpnet_core::rng;
use mdpnet_core::tensor::Tensor;
use mdpnet_core::training::{
    load_checkpoint, pretrain_autoencoder, rollout, save_checkpoint, train_end_to_end,
    TrainConfig,
};

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.get_path("out")?;
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::new("io", format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::new("io", format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn reaction_config(cfg: &RunConfig, kind: RdKind) -> Result<SimConfig, CliError> {
    let base = match kind {
        RdKind::LambdaOmega => SimConfig::lambda_omega(),
        RdKind::Brusselator => SimConfig::brusselator(),
        RdKind::GrayScott => SimConfig::gray_scott(),
    };
    let height = cfg.get_usize("height")?;
    let width = cfg.get_usize("width")?;
    // auto dx keeps the physical domain of the reference grid, so coarser
    // desk grids still cover enough diffusion lengths to desynchronize
    let domain = base.grid.dx * base.grid.height as f64;
    let dx = cfg.get_f64_auto("dx", domain / height as f64)?;
    // Gray-Scott simulates on its own grid and is resampled to the target
    let grid = match kind {
        RdKind::GrayScott => base.grid.clone(),
        _ => GridSpec::periodic(height, width, dx)?,
    };
    Ok(SimConfig {
        system: kind,
        grid,
        mu_u: cfg.get_f64_auto("mu_u", base.mu_u)?,
        mu_v: cfg.get_f64_auto("mu_v", base.mu_v)?,
        alpha: cfg.get_f64_auto("alpha", base.alpha)?,
        beta: cfg.get_f64_auto("beta", base.beta)?,
        dt: cfg.get_f64_auto("dt", base.dt)?,
        t_end: cfg.get_f64_auto("t_end", base.t_end)?,
        downsample: cfg.get_usize_auto("downsample", base.downsample)?,
        substeps: cfg.get_usize_auto("substeps", base.substeps)?,
        seed: cfg.get_u64("seed")?,
        reaction: true,
    })
}

fn simulate_one(cfg: &RunConfig, index: usize) -> Result<Trajectory, CliError> {
    let seed = cfg.get_u64("seed")? + index as u64;
    let system = cfg.get("system");
    let traj = match system {
        "lo" => {
            let mut sim = reaction_config(cfg, RdKind::LambdaOmega)?;
            sim.seed = seed;
            simulate_lambda_omega(&sim)
        }
        "bruss" => {
            let mut sim = reaction_config(cfg, RdKind::Brusselator)?;
            sim.seed = seed;
            simulate_brusselator(&sim)
        }
        "gs" => {
            let mut sim = reaction_config(cfg, RdKind::GrayScott)?;
            sim.seed = seed;
            let target = (cfg.get_usize("height")?, cfg.get_usize("width")?);
            simulate_gray_scott(&sim, Some(target))
        }
        "cylinder" => {
            let height = cfg.get_usize("height")?;
            let width = cfg.get_usize("width")?;
            let dx = cfg.get_f64_auto("dx", 1.8 / height as f64)?;
            let cyl = CylinderConfig {
                re: cfg.get_f64("re")?,
                rho: cfg.get_f64("rho")?,
                u_max: cfg.get_f64("u_max")?,
                diameter: cfg.get_f64("diameter")?,
                grid: GridSpec::channel(height, width, dx)?,
                warmup: cfg.get_usize("warmup")?,
                snapshots: cfg.get_usize("cyl_snapshots")?,
                downsample: cfg.get_usize("cyl_downsample")?,
                seed,
            };
            simulate_cylinder_lbm(&cyl)
        }
        other => {
            return Err(CliError::new(
                "config",
                format!("unknown system '{other}' (lo | bruss | gs | cylinder)"),
            ))
        }
    };
    traj.map_err(|e| CliError::new("sim", format!("trajectory {index}: {e}")))
}

/// Parse `channel_{c}_min/max` lines out of a dataset manifest.
fn stats_from_manifest(dataset: &Path) -> Result<mdpnet_core::io::NormStats, CliError> {
    let mpath = manifest_path(dataset);
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| CliError::new("io", format!("cannot read {}: {e}", mpath.display())))?;
    let mut min = Vec::new();
    let mut max = Vec::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            if let Some(rest) = k.strip_prefix("channel_") {
                let v: f32 = v
                    .parse()
                    .map_err(|_| CliError::new("data", format!("bad stats value '{v}'")))?;
                if rest.ends_with("_min") {
                    min.push(v);
                } else if rest.ends_with("_max") {
                    max.push(v);
                }
            }
        }
    }
    if min.is_empty() || min.len() != max.len() {
        return Err(CliError::new(
            "data",
            format!("no normalization stats in {}", mpath.display()),
        ));
    }
    Ok(mdpnet_core::io::NormStats { min, max })
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out(cfg)?;
    let n_traj = cfg.get_usize("n_traj")?;
    if n_traj == 0 {
        return Err(CliError::new("config", "n_traj must be >= 1"));
    }
    let mut trajs = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        trajs.push(simulate_one(cfg, i)?);
    }
    let path = out.join("dataset.mdpt");
    let mut ds = Dataset::from_trajectories(&trajs)?;
    // test-set path: reuse the training set's statistics (no leakage)
    let reuse = match cfg.get("stats_from") {
        "" => None,
        _ => Some(stats_from_manifest(&cfg.get_path("stats_from")?)?),
    };
    let stats = minmax_normalize(&mut ds, reuse.as_ref());
    write_tensor_file(&path, &ds.shape, &ds.data)?;

    let mut manifest = cfg.manifest();
    manifest.push_str(&format!(
        "shape = {}x{}x{}x{}x{}\n",
        ds.shape[0], ds.shape[1], ds.shape[2], ds.shape[3], ds.shape[4]
    ));
    for (c, (lo, hi)) in stats.min.iter().zip(stats.max.iter()).enumerate() {
        manifest.push_str(&format!("channel_{c}_min = {lo}\nchannel_{c}_max = {hi}\n"));
    }
    manifest.push_str(&trajs[0].meta.manifest_lines());
    write_text(&manifest_path(&path), &manifest)?;
    println!(
        "wrote {} ({} trajectories of {} snapshots)",
        path.display(),
        ds.shape[0],
        ds.shape[1]
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn model_config(cfg: &RunConfig, ds: &Dataset) -> Result<ModelConfig, CliError> {
    let scales = cfg.get_usize("scales")?;
    let mut mc = ModelConfig::desk(ds.shape[2], (ds.shape[3], ds.shape[4]));
    mc.scales = scales;
    mc.latent_dim = cfg.get_usize("latent_dim")?;
    mc.diffusion_steps = cfg.get_usize("diffusion_steps")?;
    mc.allocation = cfg.allocation(scales)?;
    mc.stage_mode = StageMode::parse(cfg.get("stage_mode"))
        .ok_or_else(|| CliError::new("config", "stage_mode must be global | literal"))?;
    mc.factor_mode = mdpnet_core::codec::FactorMode::parse(cfg.get("factor_mode"))
        .ok_or_else(|| CliError::new("config", "factor_mode must be linear | pow2"))?;
    match cfg.get("scale_preset") {
        "desk" => {}
        "paper" => {
            mc.enc_channels = [64, 128];
            mc.unet_channels = [64, 128, 128];
            mc.gnode_hidden = 128;
            mc.time_hidden = 128;
        }
        other => {
            return Err(CliError::new(
                "config",
                format!("scale_preset must be desk | paper, got '{other}'"),
            ))
        }
    }
    mc.groups = cfg.get_usize("groups")?;
    mc.beta_start = cfg.get_f64("beta_start")?;
    mc.beta_end = cfg.get_f64("beta_end")?;
    mc.solver_steps_per_unit = cfg.get_usize("steps_per_unit")?;
    Ok(mc)
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    let epochs_pretrain = cfg.get_usize("epochs_pretrain")?;
    Ok(TrainConfig {
        epochs_pretrain,
        encoder_warmup: cfg.get_usize_auto("encoder_warmup", epochs_pretrain / 2)?,
        epochs_e2e: cfg.get_usize("epochs_e2e")?,
        steps_per_epoch: cfg.get_usize("steps_per_epoch")?,
        batch_size: cfg.get_usize("batch")?,
        lr: cfg.get_f64("lr")? as f32,
        lambda_pred: cfg.get_f64("lambda")? as f32,
        interval: cfg.get_usize("interval")?,
        horizon_intervals: cfg.get_usize("horizon_intervals")?,
        seed: cfg.get_u64("seed")?,
        train_noise: cfg.get_f64("train_noise")?,
        checkpoint_prefix: None,
    })
}

fn loss_csv(curves: &[mdpnet_core::training::EpochLoss]) -> String {
    let mut out = String::from("epoch,stage,loss_latent,loss_pred,valid_latent\n");
    for e in curves {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.stage, e.latent, e.pred, e.valid_latent
        ));
    }
    out
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out(cfg)?;
    let ds = read_dataset(&cfg.get_path("dataset")?)?;
    let (train_idx, valid_idx) = split_train_valid(ds.n_traj(), cfg.get_u64("split_seed")?)?;
    let train = ds.subset(&train_idx);
    let valid = ds.subset(&valid_idx);

    let mut model = MdpModel::init(model_config(cfg, &ds)?, cfg.get_u64("seed")?)?;
    let mut tc = train_config(cfg)?;

    let pre_prefix = out.join("pretrain");
    tc.checkpoint_prefix = Some(pre_prefix.clone());
    let (mut curve, adam) = pretrain_autoencoder(&mut model, &train, &valid, &tc)?;
    save_checkpoint(&model, Some(&adam), "pretrain", &pre_prefix)?;

    let e2e_prefix = out.join("e2e");
    tc.checkpoint_prefix = Some(e2e_prefix.clone());
    let curve2 = train_end_to_end(&mut model, &train, &valid, &tc)?;
    save_checkpoint(&model, None, "e2e", &e2e_prefix)?;
    curve.extend(curve2);

    write_text(&out.join("loss.csv"), &loss_csv(&curve))?;
    let mut manifest = cfg.manifest();
    manifest.push_str(&format!(
        "train_trajectories = {}\nvalid_trajectories = {}\n",
        train.n_traj(),
        valid.n_traj()
    ));
    write_text(&out.join("train.manifest.txt"), &manifest)?;
    println!(
        "wrote {} and {} ({} epochs)",
        pre_prefix.with_extension("params.mdpt").display(),
        e2e_prefix.with_extension("params.mdpt").display(),
        curve.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn write_pgm(path: &Path, field: &[f32], h: usize, w: usize) -> Result<(), CliError> {
    let mut bytes = Vec::with_capacity(h * w + 32);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in field {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::new("io", format!("cannot create {}: {e}", path.display())))?;
    f.write_all(&bytes)
        .map_err(|e| CliError::new("io", format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out(cfg)?;
    let (model, stage) = load_checkpoint(&cfg.get_path("checkpoint")?)?;
    let ds = read_dataset(&cfg.get_path("dataset")?)?;
    let [n, t, c, h, w] = ds.shape;
    if (h, w) != model.cfg.grid || c != model.cfg.in_channels {
        return Err(CliError::new(
            "data",
            format!(
                "dataset {c}x{h}x{w} does not match checkpoint {}x{}x{}",
                model.cfg.in_channels, model.cfg.grid.0, model.cfg.grid.1
            ),
        ));
    }
    let stride = cfg.get_usize("stride")?;
    let horizon = match cfg.get("horizon") {
        "auto" => ((t - 1) / stride) * stride,
        _ => cfg.get_usize("horizon")?,
    };
    if horizon == 0 || stride == 0 {
        return Err(CliError::new("config", "horizon and stride must be >= 1"));
    }
    let seed = cfg.get_u64("seed")?;
    let frames_per_traj = horizon / stride;
    let mut data = Vec::with_capacity(n * frames_per_traj * c * h * w);
    for i in 0..n {
        let x0 = ds.snapshot(i, 0);
        let frames = rollout(&model, &x0, horizon, stride, seed.wrapping_add(1000 * i as u64))?;
        for f in &frames {
            data.extend_from_slice(f.data());
        }
        if i == 0 && cfg.get_bool("images")? {
            for (fi, frame) in frames.iter().enumerate() {
                for ch in 0..c {
                    let pgm = out.join(format!("pred_t{:03}_c{ch}.pgm", (fi + 1) * stride));
                    write_pgm(&pgm, &frame.data()[ch * h * w..(ch + 1) * h * w], h, w)?;
                }
            }
        }
    }
    let shape = [n, frames_per_traj, c, h, w];
    let path = out.join("predictions.mdpt");
    write_tensor_file(&path, &shape, &data)?;
    let mut manifest = cfg.manifest();
    manifest.push_str(&format!("checkpoint_stage = {stage}\n"));
    manifest.push_str(&format!("horizon = {horizon}\nstride_used = {stride}\n"));
    write_text(&manifest_path(&path), &manifest)?;
    println!(
        "wrote {} ({} trajectories, {} frames each)",
        path.display(),
        n,
        frames_per_traj
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out(cfg)?;
    let truth_path = cfg.get_path("truth")?;
    let pred_path = cfg.get_path("predictions")?;
    let truth = read_dataset(&truth_path)?;
    let preds = read_dataset(&pred_path)?;
    let stride = cfg.get_usize("stride")?;
    if truth.shape[0] != preds.shape[0]
        || truth.shape[2..] != preds.shape[2..]
        || truth.n_steps() <= preds.n_steps() * stride
    {
        return Err(CliError::new(
            "data",
            format!(
                "shape mismatch between {} {:?} and {} {:?} at stride {stride}",
                truth_path.display(),
                truth.shape,
                pred_path.display(),
                preds.shape
            ),
        ));
    }
    let mut csv = String::from("trajectory,time,nmse,ssim\n");
    let mut nmses = Vec::new();
    let mut ssims = Vec::new();
    for i in 0..preds.n_traj() {
        for f in 0..preds.n_steps() {
            let time = (f + 1) * stride;
            let y = truth.snapshot(i, time);
            let p = preds.snapshot(i, f);
            let e = nmse(&y, &p)?;
            let s = ssim(&y, &p)?;
            csv.push_str(&format!("{i},{time},{e},{s}\n"));
            nmses.push(e);
            ssims.push(s);
        }
    }
    let (nm, ns) = aggregate(nmses.iter().copied())?;
    let (sm, ss) = aggregate(ssims.iter().copied())?;
    csv.push_str(&format!("aggregate,mean±std,{nm}±{ns},{sm}±{ss}\n"));
    write_text(&out.join("metrics.csv"), &csv)?;
    println!("NMSE {nm:.6} ± {ns:.6}   SSIM {sm:.6} ± {ss:.6}");
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// Train one model on the given split and report held-out rollout metrics.
#[allow(clippy::too_many_arguments)]
fn train_and_score(
    mut mc: ModelConfig,
    tc: &TrainConfig,
    train: &Dataset,
    valid: &Dataset,
    horizon: usize,
    stride: usize,
    seed: u64,
) -> Result<(f64, f64), CliError> {
    mc.init_seed = seed;
    let mut model = MdpModel::init(mc, seed)?;
    let mut tc = tc.clone();
    tc.seed = seed;
    let (_, _) = pretrain_autoencoder(&mut model, train, valid, &tc)?;
    let _ = train_end_to_end(&mut model, train, valid, &tc)?;
    let mut nmses = Vec::new();
    let mut ssims = Vec::new();
    for i in 0..valid.n_traj() {
        let x0 = valid.snapshot(i, 0);
        let frames = rollout(&model, &x0, horizon, stride, seed.wrapping_add(77 * i as u64))?;
        for (f, frame) in frames.iter().enumerate() {
            let y = valid.snapshot(i, (f + 1) * stride);
            nmses.push(nmse(&y, frame)?);
            ssims.push(ssim(&y, frame)?);
        }
    }
    let (nm, _) = aggregate(nmses.iter().copied())?;
    let (sm, _) = aggregate(ssims.iter().copied())?;
    Ok((nm, sm))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out(cfg)?;
    let which = cfg.get("ablate");
    let ds = read_dataset(&cfg.get_path("dataset")?)?;
    let (train_idx, valid_idx) = split_train_valid(ds.n_traj(), cfg.get_u64("split_seed")?)?;
    let train = ds.subset(&train_idx);
    let valid = ds.subset(&valid_idx);
    let tc = train_config(cfg)?;
    let stride = cfg.get_usize("stride")?;
    let horizon = match cfg.get("horizon") {
        "auto" => stride * 2,
        _ => cfg.get_usize("horizon")?,
    };
    let seeds: Vec<u64> = (0..cfg.get_u64("ablate_seeds")?)
        .map(|s| cfg.get_u64("seed").unwrap_or(0) + s)
        .collect();

    match which {
        // scale-number sweep at fixed steps per scale
        "a" => {
            let steps_per_scale = cfg.get_usize("steps_per_scale")?;
            let kmax = cfg.get_usize("kmax")?;
            let mut csv = String::from("scales,diffusion_steps,nmse_median,ssim_median\n");
            for k in 1..=kmax {
                let mut mc = model_config(cfg, &ds)?;
                mc.scales = k;
                mc.diffusion_steps = steps_per_scale * k;
                mc.allocation = vec![1.0; k];
                let mut nm = Vec::new();
                let mut sm = Vec::new();
                for &s in &seeds {
                    let (a, b) =
                        train_and_score(mc.clone(), &tc, &train, &valid, horizon, stride, s)?;
                    nm.push(a);
                    sm.push(b);
                }
                csv.push_str(&format!(
                    "{k},{},{},{}\n",
                    steps_per_scale * k,
                    median(&mut nm),
                    median(&mut sm)
                ));
            }
            write_text(&out.join("ablate_scales.csv"), &csv)?;
        }
        // stage-allocation sweep
        "b" => {
            let mut csv = String::from("allocation,nmse_median,ssim_median\n");
            for alloc in ["1:1:1", "1:4:9", "9:4:1"] {
                let weights: Vec<f64> =
                    alloc.split(':').map(|v| v.parse().unwrap()).collect();
                let mut mc = model_config(cfg, &ds)?;
                mc.scales = 3;
                mc.allocation = weights;
                let mut nm = Vec::new();
                let mut sm = Vec::new();
                for &s in &seeds {
                    let (a, b) =
                        train_and_score(mc.clone(), &tc, &train, &valid, horizon, stride, s)?;
                    nm.push(a);
                    sm.push(b);
                }
                csv.push_str(&format!(
                    "{alloc},{},{}\n",
                    median(&mut nm),
                    median(&mut sm)
                ));
            }
            write_text(&out.join("ablate_allocation.csv"), &csv)?;
        }
        // training-noise robustness sweep
        "c" => {
            let mut csv = String::from("noise_level,nmse_median,ssim_median\n");
            for level in cfg.get_levels("noise_levels")? {
                let mut tc = tc.clone();
                tc.train_noise = level;
                let mc = model_config(cfg, &ds)?;
                let mut nm = Vec::new();
                let mut sm = Vec::new();
                for &s in &seeds {
                    let (a, b) =
                        train_and_score(mc.clone(), &tc, &train, &valid, horizon, stride, s)?;
                    nm.push(a);
                    sm.push(b);
                }
                csv.push_str(&format!(
                    "{level},{},{}\n",
                    median(&mut nm),
                    median(&mut sm)
                ));
            }
            write_text(&out.join("ablate_noise.csv"), &csv)?;
        }
        // latent perturbation round trip
        "d" => {
            let (model, _) = load_checkpoint(&cfg.get_path("checkpoint")?)?;
            let levels = cfg.get_levels("latent_noise_levels")?;
            let csv = latent_perturbation_study(&model, &valid, &levels, cfg.get_u64("seed")?)?;
            write_text(&out.join("ablate_perturbation.csv"), &csv)?;
        }
        other => {
            return Err(CliError::new(
                "config",
                format!("ablate must be one of a | b | c | d, got '{other}'"),
            ))
        }
    }
    write_text(&out.join("ablate.manifest.txt"), &cfg.manifest())?;
    println!("wrote ablation results under {}", out.display());
    Ok(())
}

/// Perturb one scale's latent, decode with a fixed sampling seed, re-encode,
/// and correlate the re-encoded latent against the unperturbed round trip.
pub fn latent_perturbation_study(
    model: &MdpModel,
    eval: &Dataset,
    levels: &[f64],
    seed: u64,
) -> Result<String, CliError> {
    let scales = model.cfg.scales;
    let snapshots: Vec<Tensor> = (0..eval.n_traj().min(2))
        .flat_map(|i| (0..eval.n_steps()).step_by(eval.n_steps().max(2) / 2).take(2).map(move |t| (i, t)))
        .map(|(i, t)| eval.snapshot(i, t))
        .collect();
    let mut csv = String::from("scale,level,pearson\n");
    // fixed perturbation directions per (snapshot, scale)
    let mut dir_rng = rng::substream(seed, 0x44495253); // "DIRS"
    let dirs: Vec<Vec<Tensor>> = snapshots
        .iter()
        .map(|_| {
            (0..scales)
                .map(|_| Tensor::randn(&[model.cfg.latent_dim], &mut dir_rng))
                .collect()
        })
        .collect();

    for k in 1..=scales {
        // reference: re-encoded latents of the unperturbed decode
        let mut reference: Vec<Vec<f32>> = Vec::new();
        for (si, x) in snapshots.iter().enumerate() {
            let z = model.encode_latent_state(x, 0.0)?;
            let decoded = decode_with_perturbation(model, &z, k, 0.0, &dirs[si][k - 1], seed)?;
            let re = model.encode_latent_state(&decoded, 0.0)?;
            reference.push(re.z.row(k - 1)?.data().to_vec());
        }
        for &level in levels {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (si, x) in snapshots.iter().enumerate() {
                let z = model.encode_latent_state(x, 0.0)?;
                let decoded =
                    decode_with_perturbation(model, &z, k, level, &dirs[si][k - 1], seed)?;
                let re = model.encode_latent_state(&decoded, 0.0)?;
                a.extend_from_slice(&reference[si]);
                b.extend_from_slice(re.z.row(k - 1)?.data());
            }
            let rho = pearson(&a, &b)?;
            csv.push_str(&format!("{k},{level},{rho}\n"));
        }
    }
    Ok(csv)
}

/// Decode with scale k's latent shifted by `level * std(z_k)` along a fixed
/// unit direction; the sampling seed is shared across levels.
fn decode_with_perturbation(
    model: &MdpModel,
    z: &LatentState,
    k: usize,
    level: f64,
    direction: &Tensor,
    seed: u64,
) -> Result<Tensor, CliError> {
    let mut rows: Vec<Tensor> = (1..=model.cfg.scales)
        .map(|i| z.scale(i))
        .collect::<Result<_, _>>()?;
    if level > 0.0 {
        let row = &rows[k - 1];
        let std = row.std().max(1e-6);
        let norm = (direction.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()).sqrt();
        let scale = (level * std / norm.max(1e-12)) as f32;
        rows[k - 1] = row.zip(direction, |z, d| z + scale * d)?;
    }
    let perturbed = LatentState::new(Tensor::from_rows(&rows)?, z.tau)?;
    Ok(model.decode(&perturbed, seed)?)
}

