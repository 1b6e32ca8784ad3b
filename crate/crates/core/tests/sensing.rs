use paint_core::dynsys::{default_kolmogorov, simulate_flow, Field2D, SystemParams, Trajectory};
use paint_core::sensing::*;
use proptest::prelude::*;

fn short_flow() -> Trajectory<f64> {
    simulate_flow(SystemParams { system: default_kolmogorov(4.0), seed: 1 }, 20, 100, 5).unwrap()
}

#[test]
fn noiseless_emission_reads_the_trajectory_exactly() {
    let traj = short_flow();
    let probes = sample_probes(ProbeKind::Grid { rows: 10, cols: 10 }, (32, 32), Some(4), 0).unwrap();
    let mw = emit(&traj, &probes, 3, 16, 0.0, 9).unwrap();
    assert_eq!(mw.window_length, 16);
    assert_eq!(mw.values.len(), 16 * 101 * 2);
    for k in 0..16 {
        for (p, &(r, c)) in probes.positions().iter().enumerate() {
            assert_eq!(mw.reading(k, p), traj.frames[3 + k].at(r, c));
        }
    }
    assert!(emit(&traj, &probes, 10, 11, 0.0, 0).is_err());
    assert!(emit(&traj, &probes, 0, 0, 0.0, 0).is_err());
}

#[test]
fn emission_noise_has_declared_std() {
    // one probe on a constant field, 10⁴ frames
    let field = Field2D::new(8, 8, vec![0.7; 64], vec![-0.2; 64]).unwrap();
    let frames = vec![field; 10_000];
    let probes = ProbeSet::new(vec![(3, 5)], (8, 8), false).unwrap();
    let mw = emit_frames(&frames, &probes, 0, 0.1, 42).unwrap();
    for (comp, truth) in [(0, 0.7), (1, -0.2)] {
        let xs: Vec<f64> = mw.values.iter().skip(comp).step_by(2).copied().collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() < 0.005, "std {std}");
        assert!((mean - truth).abs() < 0.005);
    }
    let again = emit_frames(&frames, &probes, 0, 0.1, 42).unwrap();
    assert_eq!(mw, again);
}

#[test]
fn zero_measurements_encode_to_zero_values() {
    let frames = vec![Field2D::<f64>::zeros(32, 32).unwrap(); 4];
    let probes = sample_probes(ProbeKind::Random { count: 25 }, (32, 32), Some(4), 3).unwrap();
    let enc = encode(&emit_frames(&frames, &probes, 0, 0.0, 0).unwrap(), (32, 32)).unwrap();
    assert!(enc.values.iter().all(|&x| x == 0.0));
    for f in 0..4 {
        assert_eq!(enc.mask_count(f), 26);
    }
}

#[test]
fn padded_encoding_leaves_forecast_frames_empty() {
    let traj = short_flow();
    let probes = sample_probes(ProbeKind::Vertical { count: 25 }, (32, 32), None, 0).unwrap();
    let enc = encode_padded(&emit(&traj, &probes, 0, 8, 0.0, 0).unwrap(), (32, 32), 12).unwrap();
    let ch = enc.to_channels();
    assert_eq!(ch.len(), 12 * 3 * 1024);
    for f in 8..12 {
        assert_eq!(enc.mask_count(f), 0);
        assert!(ch[f * 3 * 1024..(f + 1) * 3 * 1024].iter().all(|&x| x == 0.0));
    }
    assert!(encode_padded(&emit(&traj, &probes, 0, 8, 0.0, 0).unwrap(), (32, 32), 4).is_err());
    assert!(encode(&emit(&traj, &probes, 0, 8, 0.0, 0).unwrap(), (16, 16)).is_err());
}

#[test]
fn keeping_last_frames_matches_a_shorter_emission() {
    let traj = short_flow();
    let probes = sample_probes(ProbeKind::Random { count: 10 }, (32, 32), None, 5).unwrap();
    let long = emit(&traj, &probes, 2, 8, 0.0, 0).unwrap();
    let short = emit(&traj, &probes, 6, 4, 0.0, 0).unwrap();
    assert_eq!(long.last_frames(4).unwrap(), short);
    assert!(long.last_frames(9).is_err());
}

proptest! {
    #[test]
    fn encode_decode_round_trip_and_mask_sparsity(
        seed in 0u64..1000,
        count in 1usize..64,
        frames in 1usize..5,
        noise in 0.0f64..1.0,
    ) {
        let base: Vec<Field2D<f64>> = (0..frames)
            .map(|k| Field2D::from_fn(16, 16, |x: f64, y: f64| ((x + k as f64).sin(), (2.0 * y).cos())).unwrap())
            .collect();
        let probes = sample_probes(ProbeKind::Random { count }, (16, 16), None, seed).unwrap();
        let mw = emit_frames(&base, &probes, 0, noise, seed).unwrap();
        let enc = encode(&mw, (16, 16)).unwrap();
        prop_assert_eq!(decode(&enc, &probes, frames), mw.values.clone());
        for f in 0..frames {
            prop_assert_eq!(enc.mask_count(f), probes.len());
        }
        prop_assert!(enc.mask.iter().all(|&m| m == 0.0 || m == 1.0));
        let hw = 256;
        for f in 0..frames {
            for px in 0..hw {
                if enc.mask[f * hw + px] == 0.0 {
                    prop_assert_eq!(enc.values[f * 2 * hw + px], 0.0);
                    prop_assert_eq!(enc.values[f * 2 * hw + hw + px], 0.0);
                }
            }
        }
    }

    #[test]
    fn probe_text_round_trip(seed in 0u64..1000, count in 1usize..40, inlet in any::<bool>()) {
        let p = sample_probes(ProbeKind::Random { count }, (16, 32), inlet.then_some(2), seed).unwrap();
        prop_assert_eq!(ProbeSet::from_text(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn random_probes_are_unique_and_in_bounds(seed in 0u64..1000, count in 1usize..200) {
        let p = sample_probes(ProbeKind::Random { count }, (16, 16), Some(2), seed).unwrap();
        prop_assert_eq!(p.len(), count + 1);
        let mut seen = std::collections::HashSet::new();
        for &(r, c) in p.positions() {
            prop_assert!(r < 16 && c < 16);
            prop_assert!(seen.insert((r, c)));
        }
    }
}
