use num_complex::Complex;
use paint_core::dynsys::fft::{fft2, ifft2};
use paint_core::dynsys::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_dft2(x: &[Complex<f64>], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut s = Complex::new(0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let ang = -std::f64::consts::TAU * ((ky * i) as f64 / h as f64 + (kx * j) as f64 / w as f64);
                    s += x[i * w + j] * Complex::new(ang.cos(), ang.sin());
                }
            }
            out[ky * w + kx] = s;
        }
    }
    out
}

fn random_complex(n: usize, seed: u64) -> Vec<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

#[test]
fn fft_matches_naive_dft_on_8x8() {
    for seed in 0..5 {
        let x = random_complex(64, seed);
        let fast = fft2(&x, 8, 8).unwrap();
        let slow = naive_dft2(&x, 8, 8);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "seed {seed}: {err:e}");
    }
    // rectangular grids go through the same row/column path
    let x = random_complex(32, 9);
    let err = fft2(&x, 4, 8)
        .unwrap()
        .iter()
        .zip(&naive_dft2(&x, 4, 8))
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-10);
}

#[test]
fn fft_round_trip_and_parseval() {
    let x = random_complex(32 * 32, 4);
    let spec = fft2(&x, 32, 32).unwrap();
    let back = ifft2(&spec, 32, 32).unwrap();
    let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err:e}");
    let e_phys: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    let e_spec: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / 1024.0;
    assert!((e_phys - e_spec).abs() < 1e-10 * e_phys.max(1.0));
}

/// Benettin two-orbit renormalisation: independent of the derivative formula.
fn lyapunov_by_separation(r: f64, steps: usize) -> f64 {
    let mut x = 0.3;
    for _ in 0..1000 {
        x = r * x * (1.0 - x);
    }
    let d0 = 1e-9;
    let mut acc = 0.0;
    for _ in 0..steps {
        let mut y = x + d0;
        if y > 1.0 {
            y = x - d0;
        }
        let fx = r * x * (1.0 - x);
        let fy = r * y * (1.0 - y);
        acc += ((fy - fx).abs() / d0).ln();
        x = fx;
    }
    acc / steps as f64
}

#[test]
fn logistic_lyapunov_matches_separation_oracle() {
    let oracle = lyapunov_by_separation(3.8, 200_000);
    let est = logistic_lyapunov(0.3_f64, 3.8, 1000, 100_000).unwrap();
    assert!((est - oracle).abs() < 1e-2, "estimate {est} vs oracle {oracle}");
    assert!(est > 0.0);
}

fn rk4_vs_fine(s0: [f64; 3], dt: f64) -> f64 {
    let p = LorenzParams::<f64>::default();
    let coarse = lorenz_step(s0, dt, &p).unwrap();
    let mut fine = s0;
    let n = (dt / 1e-4).round() as usize;
    for _ in 0..n {
        fine = lorenz_step(fine, 1e-4, &p).unwrap();
    }
    coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn lorenz_rk4_matches_fine_steps() {
    let err = rk4_vs_fine([0.1, 0.1, 0.1], 1e-2);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn lorenz_rk4_local_error_is_fifth_order() {
    let p = LorenzParams::<f64>::default();
    let mut s = [1.0, 1.0, 1.0];
    for _ in 0..500 {
        s = lorenz_step(s, 1e-2, &p).unwrap();
    }
    for _ in 0..20 {
        let ratio = rk4_vs_fine(s, 2e-2 / 2.0) / rk4_vs_fine(s, 1e-2 / 2.0);
        assert!((24.0..40.0).contains(&ratio), "ratio {ratio} at {s:?}");
        for _ in 0..37 {
            s = lorenz_step(s, 1e-2, &p).unwrap();
        }
    }
}

#[test]
fn lorenz_stays_on_attractor() {
    let p = LorenzParams::<f64>::default();
    let mut s = [1.0, 1.0, 1.0];
    for _ in 0..100_000 {
        s = lorenz_step(s, 1e-2, &p).unwrap();
        let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        assert!(norm < 100.0);
    }
}

fn taylor_green(n: usize) -> Field2D<f64> {
    Field2D::from_fn(n, n, |x: f64, y: f64| (x.sin() * y.cos(), -x.cos() * y.sin())).unwrap()
}

#[test]
fn taylor_green_decays_at_viscous_rate() {
    let nu = 0.1;
    let dt = 0.01;
    let params = KolmogorovParams { viscosity: nu, forcing_wavenumber: 4, amplitude: 0.0 };
    let solver = KolmogorovSolver::new(32, 32, params).unwrap();
    let init = taylor_green(32);
    let mut state = init.clone();
    for _ in 0..100 {
        state = solver.step(&state, dt).unwrap();
    }
    // |k|² = 2 for the unit-wavenumber vortex array
    let decay = (-2.0 * nu * 100.0 * dt).exp();
    let num: f64 = state
        .u()
        .iter()
        .chain(state.v())
        .zip(init.u().iter().chain(init.v()))
        .map(|(a, b)| (a - b * decay).powi(2))
        .sum();
    let den: f64 = init.u().iter().chain(init.v()).map(|b| (b * decay).powi(2)).sum();
    let rel = (num / den).sqrt();
    assert!(rel < 1e-5, "relative error {rel:e}");
}

#[test]
fn unforced_energy_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = random_flow::<f64>(32, 32, &mut rng).unwrap();
    let params = KolmogorovParams { viscosity: 0.05, forcing_wavenumber: 4, amplitude: 0.0 };
    let solver = KolmogorovSolver::new(32, 32, params).unwrap();
    let mut e = state.kinetic_energy();
    for step in 0..500 {
        state = solver.step(&state, 0.01).unwrap();
        let e2 = state.kinetic_energy();
        assert!(e2 <= e, "energy rose at step {step}: {e} -> {e2}");
        e = e2;
    }
}

#[test]
fn step_output_is_divergence_free_for_any_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rough = Field2D::new(32, 32, u, v).unwrap();
    assert!(spectral_divergence(&rough).unwrap() > 1e-3);
    let params = KolmogorovParams { viscosity: 0.05, forcing_wavenumber: 4, amplitude: 3.0 };
    let out = kolmogorov_step(&rough, 0.005, params).unwrap();
    assert!(spectral_divergence(&out).unwrap() < 1e-10);
}

#[test]
fn cfl_violation_is_reported() {
    let fast = taylor_green(32).scaled(100.0);
    let params = KolmogorovParams { viscosity: 0.05, forcing_wavenumber: 4, amplitude: 0.0 };
    let err = kolmogorov_step(&fast, 0.01, params).unwrap_err();
    assert!(matches!(err, paint_core::PaintError::Cfl { .. }), "{err}");
}

fn flow_params(seed: u64) -> SystemParams {
    SystemParams { system: default_kolmogorov(4.0), seed }
}

#[test]
fn simulate_is_deterministic_and_strided() {
    let a = simulate_flow::<f64>(flow_params(3), 6, 200, 20).unwrap();
    let b = simulate_flow::<f64>(flow_params(3), 6, 200, 20).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert!((a.dt - 20.0 * DEFAULT_DT_SOLVER).abs() < 1e-15);
    let c = simulate_flow::<f64>(flow_params(4), 6, 200, 20).unwrap();
    assert_ne!(a.frames, c.frames);
    for f in &a.frames {
        assert!(spectral_divergence(f).unwrap() < 1e-10);
    }
    assert!(a.normalization > 0.0);
}

#[test]
fn seventy_step_stride_sets_frame_dt() {
    let t = simulate_flow::<f64>(flow_params(1), 2, 0, 70).unwrap();
    assert!((t.dt - 70.0 * DEFAULT_DT_SOLVER).abs() < 1e-15);
}

#[test]
fn flow_testbed_is_chaotic() {
    let params = flow_params(11);
    let base = simulate_flow::<f64>(params, 1, DEFAULT_BURN_IN, 1).unwrap();
    let System::Kolmogorov { viscosity, forcing_wavenumber, amplitude, .. } = params.system else { unreachable!() };
    let kp = KolmogorovParams { viscosity, forcing_wavenumber, amplitude };
    let mut bumped = base.frames[0].clone();
    bumped.u_mut()[100] += 1e-8;
    let n = 60;
    let stride = 400;
    let a = simulate_flow_from(params, kp, base.frames[0].clone(), n, 0, stride).unwrap();
    let b = simulate_flow_from(params, kp, bumped, n, 0, stride).unwrap();
    let rms = |f: &Field2D<f64>| (2.0 * f.kinetic_energy()).sqrt();
    let sep = |t: usize| {
        let (x, y) = (&a.frames[t], &b.frames[t]);
        let d: f64 = x.u().iter().chain(x.v()).zip(y.u().iter().chain(y.v())).map(|(p, q)| (p - q).powi(2)).sum();
        (d / 1024.0).sqrt()
    };
    let max_sep = (0..n).map(sep).fold(0.0, f64::max);
    assert!(max_sep > 0.1 * rms(&a.frames[0]), "max separation {max_sep:e}");
}

#[test]
fn vector_systems_simulate() {
    let p = SystemParams { system: System::Logistic { r: 3.8 }, seed: 2 };
    let t = simulate_vector::<f64>(p, 50, 10, 1).unwrap();
    assert!(t.frames.iter().all(|s| (0.0..=1.0).contains(&s[0])));
    let p = SystemParams { system: System::Lorenz { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, dt: 0.01 }, seed: 2 };
    let t = simulate_vector::<f64>(p, 20, 100, 5).unwrap();
    assert_eq!(t.frames.len(), 20);
    assert!((t.dt - 0.05).abs() < 1e-15);
    let bad = SystemParams { system: System::Lorenz { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, dt: 0.1 }, seed: 2 };
    assert!(simulate_vector::<f64>(bad, 2, 0, 1).is_err());
}

#[test]
fn solver_runs_in_single_precision() {
    let params = KolmogorovParams { viscosity: 0.1f32, forcing_wavenumber: 2, amplitude: 1.0 };
    let init = Field2D::<f32>::from_fn(16, 16, |x, y| (x.sin() * y.cos(), -x.cos() * y.sin())).unwrap();
    let out = kolmogorov_step(&init, 0.01, params).unwrap();
    assert!(out.is_finite());
}
