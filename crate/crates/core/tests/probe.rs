//! Scratch probe for decode quality (ignored; run explicitly while tuning).

use mdpnet_core::diffusion::LatentState;
use mdpnet_core::io::{minmax_normalize, Dataset, NormStats};
use mdpnet_core::metrics::{nmse, ssim};
use mdpnet_core::pde::{simulate_brusselator, GridSpec, SimConfig};
use mdpnet_core::tensor::Tensor;
use mdpnet_core::training::{load_checkpoint, rollout};

fn held_out() -> Dataset {
    let make = |seed0: u64, count: usize| -> Vec<mdpnet_core::pde::Trajectory> {
        (0..count)
            .map(|i| {
                let mut cfg = SimConfig::brusselator();
                cfg.grid = GridSpec::periodic(16, 16, 2.0).unwrap();
                cfg.seed = seed0 + i as u64;
                simulate_brusselator(&cfg).unwrap()
            })
            .collect()
    };
    let mut train = Dataset::from_trajectories(&make(1, 10)).unwrap();
    let stats: NormStats = minmax_normalize(&mut train, None);
    let mut held = Dataset::from_trajectories(&make(101, 2)).unwrap();
    minmax_normalize(&mut held, Some(&stats));
    held
}

#[test]
#[ignore]
fn probe_chain_magnitude() {
    use mdpnet_core::diffusion::{alpha_bar_star, posterior_step_with, ModelDenoiser, Denoiser};
    let ckpt = std::env::var("PROBE_CKPT").unwrap_or_else(|_| "/tmp/cal7/trained2/e2e".into());
    let (model, _) = load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
    let held = held_out();
    let x = held.snapshot(0, 0);
    let z = model.encode_latent_state(&x, 0.0).unwrap();
    let mut den = ModelDenoiser { store: &model.store, unet: &model.unet };
    let mut rng = mdpnet_core::rng::seeded(7);
    let mut state = Tensor::randn(x.shape(), &mut rng);
    let total = model.stages.total_steps();
    for n in (0..total).rev() {
        let k = model.stages.stage_of_step(n).unwrap();
        let cond = z.scale(k).unwrap();
        let eps_hat = den.predict(&state, n, &cond).unwrap();
        let noise = if n > 0 { Some(Tensor::randn(x.shape(), &mut rng)) } else { None };
        let ab = alpha_bar_star(&model.schedule, &model.stages, n);
        let sigma = if n == 0 { 0.0 } else { model.schedule.sigma(n) };
        state = posterior_step_with(&state, &eps_hat, model.schedule.alpha(n), ab, sigma, noise.as_ref()).unwrap();
        if n % 10 == 0 || n > total - 5 {
            println!(
                "n={n:3} k={k} |x|max={:8.3} eps_hat_max={:8.3} sigma={:.3}",
                state.max_abs(),
                eps_hat.max_abs(),
                sigma
            );
        }
    }
}

#[test]
#[ignore]
fn probe_dataset_diversity() {
    use mdpnet_core::io::read_dataset;
    for path in ["/tmp/cal7/train_data/dataset.mdpt", "/tmp/cal7/train_wide/dataset.mdpt"] {
        let ds = read_dataset(std::path::Path::new(path)).unwrap();
        let mut spatial_std = 0.0f64;
        let mut cross_corr = 0.0f64;
        let mut count = 0;
        for i in 0..ds.n_traj().min(4) {
            for t in (0..ds.n_steps()).step_by(20) {
                let s = ds.snapshot(i, t);
                spatial_std += s.std();
                let other = ds.snapshot((i + 1) % ds.n_traj().min(4), (t + 40) % ds.n_steps());
                cross_corr += mdpnet_core::metrics::pearson(s.data(), other.data()).unwrap_or(0.0).abs();
                count += 1;
            }
        }
        println!(
            "{path}: mean spatial std {:.3}, mean |cross-snapshot corr| {:.3}",
            spatial_std / count as f64,
            cross_corr / count as f64
        );
    }
}

#[test]
#[ignore]
fn probe_condition_loss_benefit() {
    // Does conditioning on the matching latent give lower denoising loss
    // than conditioning on a mismatched one?
    use mdpnet_core::codec::decompose_residuals;
    use mdpnet_core::diffusion::denoising_loss_at;
    use mdpnet_core::tensor::Tape;
    let ckpt = std::env::var("PROBE_CKPT").unwrap_or_else(|_| "/tmp/cal7/trained4/pretrain".into());
    let (model, _) = load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
    let held = held_out();
    let mut rng = mdpnet_core::rng::seeded(5);
    let (mut match_acc, mut mismatch_acc) = (0.0f64, 0.0f64);
    let trials = 60;
    for trial in 0..trials {
        let x = held.snapshot(trial % 2, (7 * trial) % held.n_steps());
        let other = held.snapshot((trial + 1) % 2, (11 * trial + 37) % held.n_steps());
        let n = (mdpnet_core::rng::uniform(&mut rng, 0.0, 100.0) as usize).min(99);
        let k = model.stages.stage_of_step(n).unwrap();
        let eps = Tensor::randn(x.shape(), &mut rng);
        let pyramid = decompose_residuals(&x, 3, model.cfg.factor_mode).unwrap();
        let z_match = model.encode_latent_state(&x, 0.0).unwrap();
        let z_other = model.encode_latent_state(&other, 0.0).unwrap();
        for (z, acc) in [(&z_match, &mut match_acc), (&z_other, &mut mismatch_acc)] {
            let mut tape = Tape::new();
            let cond = tape.constant(z.scale(k).unwrap());
            let l = denoising_loss_at(
                &mut tape, &model.store, &model.unet, &pyramid, cond, n, &eps,
                &model.schedule, &model.stages,
            )
            .unwrap();
            *acc += tape.value(l).item() as f64;
        }
    }
    println!(
        "matched condition loss {:.4} vs mismatched {:.4}",
        match_acc / trials as f64,
        mismatch_acc / trials as f64
    );
}

#[test]
#[ignore]
fn probe_oracle_condition_ceiling() {
    // Memorize 4 snapshots with the UNet conditioned on a perfect one-hot
    // snapshot id instead of encoder output. If the loss floor drops well
    // below the encoder-conditioned run, the conditioning pathway works and
    // the encoder side is the bottleneck.
    use mdpnet_core::codec::{decompose_residuals, FactorMode};
    use mdpnet_core::diffusion::{denoising_loss_at, make_schedule, make_stage_schedule, CondUNet, UNetConfig};
    use mdpnet_core::tensor::{AdamState, ParamStore, Tape};

    let mut rng = mdpnet_core::rng::seeded(43);
    let snaps: Vec<Tensor> = (0..4).map(|_| Tensor::randn(&[2, 4, 4], &mut rng)).collect();
    let pyramids: Vec<_> = snaps
        .iter()
        .map(|x| decompose_residuals(x, 2, FactorMode::Linear).unwrap())
        .collect();
    let sched = make_schedule(10, 0.05, 0.5).unwrap();
    let stages = make_stage_schedule(10, 2, &[1.0, 1.0]).unwrap();

    let mut store = ParamStore::new();
    let mut irng = mdpnet_core::rng::seeded(42);
    let unet = CondUNet::init(
        &mut store,
        UNetConfig {
            in_channels: 2,
            channels: [8, 16, 16],
            cond_dim: 4,
            time_dim: 8,
            time_hidden: 16,
            groups: 2,
        },
        &mut irng,
    );
    let all: Vec<_> = store.ids().collect();
    let mut adam = AdamState::new(&store, all, 1e-2);
    let mut lrng = mdpnet_core::rng::seeded(7);
    let mut epoch_acc = 0.0f64;
    for step in 0..480 {
        let mut tape = Tape::new();
        let mut total = None;
        for _ in 0..4 {
            let si = (mdpnet_core::rng::uniform(&mut lrng, 0.0, 4.0) as usize).min(3);
            let n = (mdpnet_core::rng::uniform(&mut lrng, 0.0, 10.0) as usize).min(9);
            let eps = Tensor::randn(&[2, 4, 4], &mut lrng);
            let mut onehot = vec![0.0f32; 4];
            onehot[si] = 1.0;
            let cond = tape.constant(Tensor::new(&[4], onehot).unwrap());
            let l = denoising_loss_at(
                &mut tape, &store, &unet, &pyramids[si], cond, n, &eps, &sched, &stages,
            )
            .unwrap();
            total = Some(match total {
                Some(t) => tape.add(t, l).unwrap(),
                None => l,
            });
        }
        let loss = tape.mul_scalar(total.unwrap(), 0.25);
        let v = tape.value(loss).item() as f64;
        epoch_acc += v;
        if (step + 1) % 40 == 0 {
            println!("step {:3}: mean loss {:.3}", step + 1, epoch_acc / 40.0);
            epoch_acc = 0.0;
        }
        let grads = tape.backward(loss).unwrap();
        adam.step(&mut store, &grads);
    }
}

#[test]
#[ignore]
fn probe_fresh_encoder_sensitivity() {
    use mdpnet_core::model::{MdpModel, ModelConfig};
    let model = MdpModel::init(ModelConfig::desk(2, (16, 16)), 3).unwrap();
    let held = held_out();
    let xa = held.snapshot(0, 0);
    let xb = held.snapshot(1, 50);
    let za = model.encode_latent_state(&xa, 0.0).unwrap();
    let zb = model.encode_latent_state(&xb, 0.0).unwrap();
    let diff = za.z.zip(&zb.z, |p, q| (p - q).abs()).unwrap();
    println!(
        "fresh encoder: mean|za-zb| = {:.4}, max = {:.4}, |za| std {:.4}",
        diff.mean(),
        diff.max_abs(),
        za.z.std()
    );
}

#[test]
#[ignore]
fn probe_condition_sensitivity() {
    let ckpt = std::env::var("PROBE_CKPT").unwrap_or_else(|_| "/tmp/cal7/trained/e2e".into());
    let (model, _) = load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
    let held = held_out();
    let xa = held.snapshot(0, 0);
    let xb = held.snapshot(1, 50);
    let za = model.encode_latent_state(&xa, 0.0).unwrap();
    let zb = model.encode_latent_state(&xb, 0.0).unwrap();
    println!("za row0 head: {:?}", &za.z.row(0).unwrap().data()[..4]);
    println!("zb row0 head: {:?}", &zb.z.row(0).unwrap().data()[..4]);
    let da = model.decode(&za, 99).unwrap();
    let db = model.decode(&zb, 99).unwrap(); // same sampling seed
    let diff = da.zip(&db, |p, q| (p - q).abs()).unwrap();
    println!(
        "decode sensitivity: mean|da-db| = {:.4}, max = {:.4}",
        diff.mean(),
        diff.max_abs()
    );
    println!(
        "da: mean {:.3} std {:.3}; xa: mean {:.3} std {:.3}",
        da.mean(),
        da.std(),
        xa.mean(),
        xa.std()
    );
    println!(
        "ssim(da,xa) = {:.3}  ssim(da,xb) = {:.3}  ssim(db,xb) = {:.3}",
        ssim(&xa, &da).unwrap(),
        ssim(&xb, &da).unwrap(),
        ssim(&xb, &db).unwrap()
    );
}

#[test]
#[ignore]
fn probe_reconstruction_vs_prediction() {
    let (model, _) = load_checkpoint(std::path::Path::new("/tmp/cal7/trained2/e2e")).unwrap();
    let held = held_out();
    for i in 0..held.n_traj() {
        for t in [0usize, 5, 50] {
            let x = held.snapshot(i, t);
            // pure reconstruction path: encode -> decode
            let recon = rollout(&model, &x, 0, 5, 42).unwrap();
            let s = ssim(&x, &recon[0]).unwrap();
            let e = nmse(&x, &recon[0]).unwrap();
            println!("traj {i} t {t}: reconstruction SSIM {s:.3} NMSE {e:.3}");
        }
        // prediction path at tau = 5, 10
        let frames = rollout(&model, &held.snapshot(i, 0), 10, 5, 43).unwrap();
        for (f, frame) in frames.iter().enumerate() {
            let y = held.snapshot(i, (f + 1) * 5);
            println!(
                "traj {i} tau {}: prediction SSIM {:.3} NMSE {:.3}",
                (f + 1) * 5,
                ssim(&y, frame).unwrap(),
                nmse(&y, frame).unwrap()
            );
        }
        // latent prediction error in latent space
        let z0 = model.encode_latent_state(&held.snapshot(i, 0), 0.0).unwrap();
        let z5_true = model.encode_latent_state(&held.snapshot(i, 5), 0.0).unwrap();
        let z5_pred = model
            .dynamics
            .integrate(&model.store, &z0.z, 5.0, &model.solver())
            .unwrap();
        let zerr = nmse(&z5_true.z, &z5_pred).unwrap();
        println!("traj {i}: latent prediction NMSE at tau=5: {zerr:.4}");
        // decode with the TRUE latents of t=5 (condition quality ceiling)
        let dec_true = model.decode(&z5_true, 44).unwrap();
        let y5 = held.snapshot(i, 5);
        println!(
            "traj {i}: decode(true z_5) SSIM {:.3} NMSE {:.3}",
            ssim(&y5, &dec_true).unwrap(),
            nmse(&y5, &dec_true).unwrap()
        );
        let lat = LatentState::new(z5_pred, 5.0).unwrap();
        let dec_pred = model.decode(&lat, 44).unwrap();
        println!(
            "traj {i}: decode(pred z_5) SSIM {:.3} NMSE {:.3}",
            ssim(&y5, &dec_pred).unwrap(),
            nmse(&y5, &dec_pred).unwrap()
        );
    }
}
