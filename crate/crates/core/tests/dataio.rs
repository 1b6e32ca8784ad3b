use paint_core::dataio::*;
use paint_core::dynsys::{default_kolmogorov, simulate_flow, Field2D, System, SystemParams, Trajectory};
use paint_core::sensing::{sample_probes, ProbeKind};
use paint_core::PaintError;
use proptest::prelude::*;

fn flow(seed: u64, n: usize) -> Trajectory<f64> {
    simulate_flow(SystemParams { system: default_kolmogorov(3.5), seed }, n, 50, 4).unwrap()
}

#[test]
fn trajectory_round_trip_is_bit_exact() {
    let traj = flow(2, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ptrj");
    write_trajectory(&path, &traj).unwrap();
    let back: Trajectory<f64> = read_trajectory(&path).unwrap();
    assert_eq!(back, traj);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"PTRJ");
    assert_eq!(bytes.len(), TRAJECTORY_HEADER_BYTES + 7 * 2 * 32 * 32 * 8);
}

#[test]
fn payload_size_for_a_thousand_frames() {
    let frame = Field2D::<f64>::zeros(32, 32).unwrap();
    let traj = Trajectory {
        frames: vec![frame; 1000],
        dt: 0.1,
        params: SystemParams { system: default_kolmogorov(2.0), seed: 0 },
        normalization: 1.0,
    };
    let bytes = encode_trajectory(&traj).unwrap();
    assert_eq!(bytes.len() - TRAJECTORY_HEADER_BYTES, 1000 * 2 * 32 * 32 * 8);
}

#[test]
fn truncated_and_corrupt_files_are_described() {
    let bytes = encode_trajectory(&flow(1, 3)).unwrap();
    let full = bytes.len();
    let err = decode_trajectory::<f64>(&bytes[..full - 8]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains(&full.to_string()) && msg.contains(&(full - 8).to_string()), "{msg}");
    let err = decode_trajectory::<f64>(&bytes[..40]).unwrap_err().to_string();
    assert!(err.contains("100") && err.contains("40"), "{err}");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_trajectory::<f64>(&bad), Err(PaintError::Format(_))));
    let mut bad = bytes;
    bad[4] = 9;
    assert!(decode_trajectory::<f64>(&bad).unwrap_err().to_string().contains("version"));
}

#[test]
fn eighteen_parameters_split_fifteen_one_two() {
    let params: Vec<f64> = (0..18).map(|i| 2.0 + 0.2 * i as f64).collect();
    for seed in 0..20 {
        let m = make_splits(&params, seed).unwrap();
        assert_eq!(m.split(Split::Train).count(), 15);
        assert_eq!(m.split(Split::Val).count(), 1);
        assert_eq!(m.split(Split::Test).count(), 2);
        for e in m.entries.iter().filter(|e| e.split != Split::Train) {
            assert!(e.param != params[0] && e.param != params[17]);
        }
        m.validate().unwrap();
        assert_eq!(m, make_splits(&params, seed).unwrap());
    }
    assert_ne!(make_splits(&params, 0).unwrap(), make_splits(&params, 1).unwrap());
    assert!(make_splits(&params[..3], 0).is_err());
}

#[test]
fn manifest_round_trips_and_checks_files() {
    let dir = tempfile::tempdir().unwrap();
    let params = [1.0, 1.5, 2.0, 2.5, 3.0];
    let m = make_splits(&params, 4).unwrap();
    let path = dir.path().join("manifest.csv");
    m.write(&path).unwrap();
    assert_eq!(DatasetManifest::from_text(&m.to_text()).unwrap(), m);
    // files missing
    assert!(DatasetManifest::read(&path).is_err());
    for e in &m.entries {
        std::fs::write(dir.path().join(&e.path), b"").unwrap();
    }
    let read = DatasetManifest::read(&path).unwrap();
    assert!(read.entries.iter().all(|e| e.path.starts_with(dir.path())));
    let bad = DatasetManifest::from_text("a,5.0,train\nb,9.0,test\n").unwrap();
    assert!(bad.validate().is_err());
}

#[test]
fn window_alignment_and_shapes() {
    let traj = flow(3, 30);
    let probes = sample_probes(ProbeKind::Grid { rows: 10, cols: 10 }, (32, 32), Some(4), 0).unwrap();
    let w = extract_window(&traj, &probes, 15, 16, 8).unwrap();
    assert_eq!(w.states.len(), 24);
    assert_eq!(w.history(), 16);
    assert_eq!(w.forecast(), 8);
    assert_eq!(w.measurements.t_start, 0);
    assert_eq!(w.param, 3.5);
    for k in 0..16 {
        for (p, &(r, c)) in probes.positions().iter().enumerate() {
            assert_eq!(w.measurements.reading(k, p), w.states[k].at(r, c));
        }
    }
    let (u0, _) = traj.frames[0].at(5, 5);
    assert_eq!(w.states[0].at(5, 5).0, u0 * (1.0 / traj.normalization));
    let filt = extract_window(&traj, &probes, 10, 8, 0).unwrap();
    assert_eq!(filt.states.len(), 8);
    assert_eq!(extract_window(&traj, &probes, 20, 8, 4).unwrap().states.len(), 12);
    assert!(extract_window(&traj, &probes, 6, 8, 4).is_err());
    assert!(extract_window(&traj, &probes, 26, 8, 4).is_err());
}

#[test]
fn vector_system_headers_round_trip() {
    let frame = Field2D::<f64>::zeros(8, 8).unwrap();
    for system in [System::Logistic { r: 3.8 }, System::Lorenz { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, dt: 0.01 }] {
        let traj = Trajectory { frames: vec![frame.clone(); 2], dt: 1.0, params: SystemParams { system, seed: 5 }, normalization: 1.0 };
        assert_eq!(decode_trajectory::<f64>(&encode_trajectory(&traj).unwrap()).unwrap(), traj);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn arbitrary_fields_round_trip(
        data in proptest::collection::vec(-1e6f64..1e6, 2 * 2 * 64),
        dt in 1e-4f64..10.0,
        seed in any::<u64>(),
        amp in 0.1f64..10.0,
    ) {
        let frames = data
            .chunks(128)
            .map(|c| Field2D::new(8, 8, c[..64].to_vec(), c[64..].to_vec()).unwrap())
            .collect();
        let mut system = default_kolmogorov(amp);
        if let System::Kolmogorov { h, w, .. } = &mut system {
            *h = 8;
            *w = 8;
        }
        let traj = Trajectory { frames, dt, params: SystemParams { system, seed }, normalization: amp.sqrt() };
        prop_assert_eq!(decode_trajectory::<f64>(&encode_trajectory(&traj).unwrap()).unwrap(), traj);
    }

    #[test]
    fn splits_never_extrapolate(n in 4usize..40, seed in any::<u64>(), base in -5.0f64..5.0) {
        let params: Vec<f64> = (0..n).map(|i| base + 0.37 * i as f64).collect();
        let m = make_splits(&params, seed).unwrap();
        prop_assert!(m.validate().is_ok());
        prop_assert_eq!(m.split(Split::Val).count(), 1);
        prop_assert_eq!(m.split(Split::Test).count(), if n == 4 { 1 } else { 2 });
    }
}
