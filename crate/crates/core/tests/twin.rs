use paint_core::dataio::read_trajectory;
use paint_core::dynsys::{default_kolmogorov, Field2D, SystemParams};
use paint_core::generative::{ArModel, ArModelConfig, WindowModel, WindowModelConfig};
use paint_core::sensing::{emit_frames, sample_probes, MeasurementWindow, ProbeKind};
use paint_core::twin::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRID: (usize, usize) = (16, 16);

fn field(seed: u64) -> Field2D<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || rand::Rng::gen_range(&mut rng, -1.0..1.0);
    let u = (0..256).map(|_| draw()).collect();
    let v = (0..256).map(|_| draw()).collect();
    Field2D::new(16, 16, u, v).unwrap()
}

fn stream(len: usize, t_start: usize, seed: u64) -> MeasurementWindow<f64> {
    let probes = sample_probes(ProbeKind::Grid { rows: 3, cols: 3 }, GRID, None, 0).unwrap();
    let frames: Vec<_> = (0..len as u64).map(|i| field(seed * 1000 + i)).collect();
    emit_frames(&frames, &probes, t_start, 0.0, 0).unwrap()
}

fn model() -> WindowModel<f64> {
    let cfg = WindowModelConfig { grid: GRID, frames: 4, patch: 4, dim: 16, layers: 2, heads: 2, mlp_ratio: 2 };
    WindowModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn cfg(mode: TwinMode) -> TwinConfig {
    TwinConfig { history: 3, forecast: 1, mode, n_seeds: 1, steps: 4, seed: 1, normalization: 2.0 }
}

#[test]
fn one_window_gives_history_plus_forecast_frames() {
    let r = reconstruct(&model(), &stream(3, 5, 0), &cfg(TwinMode::Sequence)).unwrap();
    assert_eq!(r.frames.len(), 4);
    assert_eq!((r.t_start, r.forecast), (5, 1));
}

#[test]
fn sequence_mode_covers_the_whole_stream() {
    let r = reconstruct(&model(), &stream(8, 0, 0), &cfg(TwinMode::Sequence)).unwrap();
    assert_eq!(r.frames.len(), 8 + 1);
}

#[test]
fn sliding_single_yields_one_frame_per_full_window() {
    let r = reconstruct(&model(), &stream(7, 10, 0), &cfg(TwinMode::SlidingSingle)).unwrap();
    assert_eq!(r.frames.len(), 7 - 3 + 1);
    assert_eq!((r.t_start, r.forecast), (12, 0));
}

#[test]
fn short_stream_is_rejected() {
    assert!(reconstruct(&model(), &stream(2, 0, 0), &cfg(TwinMode::Sequence)).is_err());
    let too_long = TwinConfig { history: 4, ..cfg(TwinMode::Sequence) };
    assert!(reconstruct(&model(), &stream(8, 0, 0), &too_long).is_err());
}

#[test]
fn measurements_outside_the_window_do_not_matter() {
    let m = model();
    let c = cfg(TwinMode::SlidingSingle);
    let a = stream(8, 0, 0);
    let mut b = a.clone();
    // rewrite frames 0..3; the window for t = 6 is [4, 6]
    let stride = a.probes.len() * 2;
    b.values[..3 * stride].iter_mut().for_each(|x| *x += 5.0);
    let ea = SlidingTwin::new(&m, c).unwrap().advance(&a, 6).unwrap();
    let eb = SlidingTwin::new(&m, c).unwrap().advance(&b, 6).unwrap();
    assert_eq!(ea, eb);
    // and the full reconstructions agree from t = 6 on
    let ra = reconstruct(&m, &a, &c).unwrap();
    let rb = reconstruct(&m, &b, &c).unwrap();
    assert_eq!(ra.frames[4..], rb.frames[4..]);
    assert_ne!(ra.frames[0], rb.frames[0]);
}

#[test]
fn earlier_estimates_have_no_influence() {
    let s = prior_output_sensitivity(&model(), &stream(8, 0, 0), &cfg(TwinMode::SlidingSingle), 7, 3.0).unwrap();
    assert_eq!(s, 0.0);
}

#[test]
fn single_member_ensemble_has_zero_std_and_is_deterministic() {
    let m = model();
    let s = stream(6, 0, 1);
    let e = ensemble(&m, &s, &cfg(TwinMode::Sequence), false).unwrap();
    assert!(e.std.iter().all(|f| f.u().iter().chain(f.v()).all(|&x| x == 0.0)));
    let c3 = TwinConfig { n_seeds: 3, ..cfg(TwinMode::Sequence) };
    let a = ensemble(&m, &s, &c3, true).unwrap();
    let b = ensemble(&m, &s, &c3, false).unwrap();
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.std, b.std);
    assert_eq!(a.members.as_ref().unwrap().len(), 3);
    assert!(a.std.iter().all(|f| f.u().iter().chain(f.v()).all(|&x| x >= 0.0)));
    assert!(a.std.iter().any(|f| f.u().iter().any(|&x| x > 0.0)));
}

#[test]
fn estimate_file_has_a_std_sidecar() {
    let m = model();
    let c3 = TwinConfig { n_seeds: 2, ..cfg(TwinMode::Sequence) };
    let e = ensemble(&m, &stream(3, 0, 2), &c3, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("est.ptrj");
    let params = SystemParams { system: default_kolmogorov(3.0), seed: 0 };
    let side = write_estimate(&path, &e, 0.1, params, 2.0).unwrap();
    assert_eq!(side, dir.path().join("est.std.ptrj"));
    let mean = read_trajectory::<f64>(&path).unwrap();
    let std = read_trajectory::<f64>(&side).unwrap();
    assert_eq!(mean.frames, e.mean);
    assert_eq!(std.frames, e.std);
}

fn persistence_ar() -> ArModel<f64> {
    let cfg = ArModelConfig { grid: GRID, context: 2, patch: 4, dim: 8, layers: 1, heads: 2, mlp_hidden: 8 };
    let mut m = ArModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let names = m.params.names().to_vec();
    for (t, name) in m.params.tensors_mut().iter_mut().zip(&names) {
        if name.starts_with("out") {
            t.data_mut().fill(0.0);
        }
    }
    m
}

#[test]
fn zero_step_rollout_returns_the_initial_states() {
    let init = vec![field(1), field(2)];
    let out = ar_rollout(&persistence_ar(), &init, &stream(3, 2, 0), 0, 1.0).unwrap();
    assert_eq!(out, init);
}

#[test]
fn exact_model_of_a_steady_system_never_drifts() {
    // the zero-increment model is exact for x_{t+1} = x_t
    let x = field(5);
    let probes = sample_probes(ProbeKind::Grid { rows: 3, cols: 3 }, GRID, None, 0).unwrap();
    let s = emit_frames(&vec![x.clone(); 50], &probes, 2, 0.0, 0).unwrap();
    let out = ar_rollout(&persistence_ar(), &[x.clone(), x.clone()], &s, 50, 1.7).unwrap();
    assert_eq!(out.len(), 52);
    for f in &out {
        for (a, b) in f.u().iter().zip(x.u()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn rollout_longer_than_the_stream_is_rejected() {
    let init = vec![field(1), field(2)];
    assert!(ar_rollout(&persistence_ar(), &init, &stream(3, 2, 0), 4, 1.0).is_err());
}

#[test]
fn modes_parse_and_print() {
    for m in [TwinMode::Sequence, TwinMode::SlidingSingle] {
        assert_eq!(m.to_string().parse::<TwinMode>().unwrap(), m);
    }
    assert!("both".parse::<TwinMode>().is_err());
}
