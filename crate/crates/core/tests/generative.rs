use paint_core::dataio::extract_window;
use paint_core::dynsys::{default_kolmogorov, simulate_flow, System, SystemParams, Trajectory};
use paint_core::generative::*;
use paint_core::sensing::{encode_padded, sample_probes, ProbeKind};
use paint_core::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_flow(amplitude: f64, seed: u64, frames: usize) -> Trajectory<f64> {
    let System::Kolmogorov { viscosity, dt_solver, forcing_wavenumber, .. } = default_kolmogorov(amplitude) else {
        unreachable!()
    };
    let system = System::Kolmogorov { viscosity, dt_solver, h: 16, w: 16, forcing_wavenumber, amplitude };
    simulate_flow(SystemParams { system, seed }, frames, 20, 2).unwrap()
}

fn tiny_config() -> WindowModelConfig {
    WindowModelConfig { grid: (16, 16), frames: 4, patch: 4, dim: 16, layers: 2, heads: 2, mlp_ratio: 2 }
}

fn tiny_train(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        warmup_steps: 1,
        history: 3,
        forecast: 1,
        probe_count: (4, 8),
        ..Default::default()
    }
}

#[test]
fn weight_map_peaks_at_probes() {
    let probes = sample_probes(ProbeKind::Grid { rows: 1, cols: 1 }, (32, 32), None, 0).unwrap();
    let (r, c) = probes.positions()[0];
    let wm = SpatialWeightMap::<f64>::new(&probes, 9.0, 2.0).unwrap();
    assert!((wm.at(r, c) - 10.0).abs() < 1e-12);
    // one pixel away: 1 + 9 exp(-1/8)
    assert!((wm.at(r, c + 1) - (1.0 + 9.0 * (-1.0f64 / 8.0).exp())).abs() < 1e-12);
    let far = wm.at((r + 16) % 32, (c + 16) % 32);
    assert!((far - 1.0).abs() < 1e-6, "far weight {far}");
}

#[test]
fn weighted_mse_is_zero_at_target_and_plain_mse_without_bonus() {
    let probes = sample_probes(ProbeKind::Random { count: 5 }, (8, 8), None, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let target = gaussian_noise::<f64>(2 * 2 * 64, &mut rng);
    let pred = gaussian_noise::<f64>(2 * 2 * 64, &mut rng);

    let wm = SpatialWeightMap::<f64>::new(&probes, 9.0, 2.0).unwrap();
    let mut tape = Tape::new();
    let p = tape.constant(&[2, 2, 8, 8], target.clone()).unwrap();
    let l = weighted_mse(&mut tape, p, &target, &wm.weights, &[8, 8]).unwrap();
    assert_eq!(tape.value(l)[0], 0.0);

    let flat = SpatialWeightMap::<f64>::new(&probes, 0.0, 2.0).unwrap();
    let mut tape = Tape::new();
    let p = tape.constant(&[2, 2, 8, 8], pred.clone()).unwrap();
    let l = weighted_mse(&mut tape, p, &target, &flat.weights, &[8, 8]).unwrap();
    let mse = pred.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64;
    assert!((tape.value(l)[0] - mse).abs() < 1e-12);
}

#[test]
fn zero_velocity_leaves_the_source_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = gaussian_noise::<f64>(50, &mut rng);
    let out = euler_integrate(x0.clone(), 20, |x, _| Ok(vec![0.0; x.len()])).unwrap();
    assert_eq!(out, x0);
}

#[test]
fn sampler_with_silenced_output_returns_coupled_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = WindowModel::<f64>::new(tiny_config(), &mut rng).unwrap();
    for (name, t) in m.params.names().to_vec().iter().zip(0..) {
        if name.starts_with("out") {
            m.params.tensors_mut()[t].data_mut().fill(0.0);
        }
    }
    let traj = small_flow(3.0, 0, 8);
    let probes = sample_probes(ProbeKind::Random { count: 6 }, (16, 16), None, 0).unwrap();
    let w = extract_window(&traj, &probes, 4, 3, 1).unwrap();
    let enc = encode_padded(&w.measurements, (16, 16), 4).unwrap();
    let got = fm_sample_encoded(&m, &enc, 20, 9).unwrap();
    let noise = gaussian_noise::<f64>(4 * 2 * 256, &mut ChaCha8Rng::seed_from_u64(9));
    let want = coupled_source(&enc, &noise).unwrap();
    let flat: Vec<f64> = got.iter().flat_map(|f| f.to_channels()).collect();
    assert_eq!(flat, want);
}

#[test]
fn coupled_source_pins_probe_pixels_to_measurements() {
    let traj = small_flow(3.0, 1, 8);
    let probes = sample_probes(ProbeKind::Random { count: 6 }, (16, 16), None, 4).unwrap();
    let w = extract_window(&traj, &probes, 4, 3, 1).unwrap();
    let enc = encode_padded(&w.measurements, (16, 16), 4).unwrap();
    let noise = vec![0.0; 4 * 2 * 256];
    let x0 = coupled_source(&enc, &noise).unwrap();
    assert_eq!(x0, enc.values);
}

#[test]
fn window_model_output_has_state_shape_and_checkpoint_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = WindowModel::<f64>::new(tiny_config(), &mut rng).unwrap();
    let x = gaussian_noise::<f64>(4 * 2 * 256, &mut rng);
    let enc = vec![0.0; 4 * 3 * 256];
    let v = m.velocity(&x, 0.3, &enc).unwrap();
    assert_eq!(v.len(), x.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_model(&path, &m).unwrap();
    let back: WindowModel<f64> = load_model(&path).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.velocity(&x, 0.3, &enc).unwrap(), v);
}

#[test]
fn ar_baseline_is_matched_in_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = desk_window_config();
    let paint = WindowModel::<f64>::new(cfg, &mut rng).unwrap();
    let ar_cfg = ArModelConfig::matched_to(&cfg, paint.param_count(), 2);
    let ar = ArModel::<f64>::new(ar_cfg, &mut rng).unwrap();
    assert_eq!(ar.param_count(), ar_cfg.param_count());
    let rel = (ar.param_count() as f64 - paint.param_count() as f64).abs() / paint.param_count() as f64;
    assert!(rel < 0.1, "AR {} vs window {}", ar.param_count(), paint.param_count());
}

#[test]
fn training_is_deterministic_and_resume_is_bit_exact() {
    let trajs = vec![small_flow(3.0, 0, 10), small_flow(4.0, 1, 10)];
    let init = || WindowModel::<f64>::new(tiny_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let cfg = tiny_train(4);

    let a = train_paint(&trajs, init(), &cfg, &TrainIo::default()).unwrap();
    let b = train_paint(&trajs, init(), &cfg, &TrainIo::default()).unwrap();
    assert_eq!(a.losses, b.losses);
    assert!(a.losses.iter().all(|l| l.loss.is_finite()));

    // a run killed after step 3 with checkpoints every 2 steps resumes
    // from step 2 and must land exactly where the uninterrupted run did
    let dir = tempfile::tempdir().unwrap();
    let io = TrainIo {
        checkpoint: Some(dir.path().join("run.ckpt")),
        loss_log: Some(dir.path().join("loss.csv")),
        resume: true,
        interrupt_after: None,
    };
    let cfg = TrainConfig { checkpoint_every: 2, ..cfg };
    let killed = train_paint(&trajs, init(), &cfg, &TrainIo { interrupt_after: Some(3), ..io.clone() }).unwrap();
    assert_eq!(killed.losses.len(), 3);
    let resumed = train_paint(&trajs, init(), &cfg, &io).unwrap();
    assert_eq!(resumed.losses[..], a.losses[2..]);
    for (x, y) in resumed.model.params.tensors().iter().zip(a.model.params.tensors()) {
        assert_eq!(x.data(), y.data());
    }
    let log = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let steps: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(log.lines().next(), Some("step,lr,loss"));
    assert_eq!(steps, ["0", "1", "2", "3"]);
}

#[test]
fn ar_training_runs_and_rollout_step_has_state_shape() {
    let trajs = vec![small_flow(3.0, 0, 10)];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = ArModelConfig { grid: (16, 16), context: 2, patch: 4, dim: 16, layers: 1, heads: 2, mlp_hidden: 32 };
    let m = ArModel::<f64>::new(cfg, &mut rng).unwrap();
    let tc = TrainConfig { history: 2, ..tiny_train(3) };
    let r = train_ar(&trajs, m, &tc, &TrainIo::default()).unwrap();
    assert_eq!(r.losses.len(), 3);
    let probes = sample_probes(ProbeKind::Random { count: 6 }, (16, 16), None, 0).unwrap();
    let w = extract_window(&trajs[0], &probes, 2, 1, 0).unwrap();
    let enc = encode_padded(&w.measurements, (16, 16), 1).unwrap();
    let x = ar_step(&r.model, &trajs[0].frames[..2], &enc).unwrap();
    assert_eq!((x.height(), x.width()), (16, 16));
}

#[test]
fn flow_matching_learns_a_correlated_gaussian() {
    let target = GaussianTarget { mean: [1.0, -0.5], cov: [[0.5, 0.3], [0.3, 0.8]] };
    let cfg = TrainConfig {
        steps: 1500,
        batch: 1,
        lr_start: 1e-4,
        lr_peak: 3e-3,
        lr_end: 1e-4,
        warmup_steps: 100,
        weight_decay: 0.0,
        seed: 11,
        ..Default::default()
    };
    let m = PointVelocity::<f64>::new(64, 0);
    let r = train_toy(&target, m, &cfg, 256).unwrap();
    let pts = sample_toy(&r.model, 4000, 50, 1).unwrap();
    let (mean, cov) = moments(&pts);
    for i in 0..2 {
        assert!((mean[i] - target.mean[i]).abs() < 0.1, "mean {mean:?}");
        for j in 0..2 {
            assert!((cov[i][j] - target.cov[i][j]).abs() < 0.15, "cov {cov:?}");
        }
    }
}
