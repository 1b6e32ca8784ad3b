//! Ground-truth dynamical systems: the logistic map, Lorenz-63 and a forced
//! 2-D incompressible flow, plus the FFT the flow solver is built on.

pub mod fft;
mod kolmogorov;
mod maps;

pub use kolmogorov::{kolmogorov_step, spectral_divergence, KolmogorovParams, KolmogorovSolver, CFL_LIMIT};
pub use maps::{logistic_derivative, logistic_lyapunov, logistic_step, lorenz_step, LorenzParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PaintError, Result};
use crate::scalar::{c, standard_normal, Scalar};

/// Two-component velocity field on a row-major `h × w` grid; rows index `y`,
/// columns index `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2D<T> {
    h: usize,
    w: usize,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Field2D<T> {
    pub fn new(h: usize, w: usize, u: Vec<T>, v: Vec<T>) -> Result<Self> {
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return Err(PaintError::invalid(format!("grid {h}x{w} must have power-of-two sides")));
        }
        if u.len() != h * w || v.len() != h * w {
            return Err(PaintError::shape(
                "field2d",
                format!("{h}x{w} grid, got {} u and {} v values", u.len(), v.len()),
            ));
        }
        Ok(Field2D { h, w, u, v })
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![T::zero(); h * w], vec![T::zero(); h * w])
    }

    /// Samples `u(x, y)`, `v(x, y)` at grid points `x_j = 2πj/w`, `y_i = 2πi/h`.
    pub fn from_fn(h: usize, w: usize, f: impl Fn(T, T) -> (T, T)) -> Result<Self> {
        let two_pi = T::PI() + T::PI();
        let mut u = Vec::with_capacity(h * w);
        let mut v = Vec::with_capacity(h * w);
        for i in 0..h {
            let y = two_pi * T::from_usize_lossy(i) / T::from_usize_lossy(h);
            for j in 0..w {
                let x = two_pi * T::from_usize_lossy(j) / T::from_usize_lossy(w);
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(h, w, u, v)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut [T] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [T] {
        &mut self.v
    }

    /// Velocity at grid point `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> (T, T) {
        let k = row * self.w + col;
        (self.u[k], self.v[k])
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Mean kinetic energy `½⟨u² + v²⟩`.
    pub fn kinetic_energy(&self) -> T {
        let s: T = self.u.iter().zip(&self.v).map(|(&a, &b)| a * a + b * b).sum();
        s / (T::from_usize_lossy(self.h * self.w) * c(2.0))
    }

    pub fn max_speed(&self) -> T {
        self.u
            .iter()
            .chain(&self.v)
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn scaled(&self, s: T) -> Self {
        Field2D {
            h: self.h,
            w: self.w,
            u: self.u.iter().map(|&x| x * s).collect(),
            v: self.v.iter().map(|&x| x * s).collect(),
        }
    }

    /// Channel-major `[u..., v...]` buffer.
    pub fn to_channels(&self) -> Vec<T> {
        let mut out = self.u.clone();
        out.extend_from_slice(&self.v);
        out
    }

    pub fn from_channels(h: usize, w: usize, data: &[T]) -> Result<Self> {
        if data.len() != 2 * h * w {
            return Err(PaintError::shape(
                "field2d",
                format!("{h}x{w} two-channel field needs {} values, got {}", 2 * h * w, data.len()),
            ));
        }
        Self::new(h, w, data[..h * w].to_vec(), data[h * w..].to_vec())
    }
}

/// Which system generated a trajectory, with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum System {
    Logistic { r: f64 },
    Lorenz { sigma: f64, rho: f64, beta: f64, dt: f64 },
    Kolmogorov { viscosity: f64, forcing_wavenumber: usize, amplitude: f64, dt_solver: f64, h: usize, w: usize },
}

impl System {
    pub fn id(&self) -> u32 {
        match self {
            System::Logistic { .. } => 0,
            System::Lorenz { .. } => 1,
            System::Kolmogorov { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Logistic { .. } => "logistic",
            System::Lorenz { .. } => "lorenz",
            System::Kolmogorov { .. } => "kolmogorov",
        }
    }

    /// The scalar that conditions a dataset: forcing amplitude for the flow,
    /// `r` for the logistic map, `ρ` for Lorenz.
    pub fn conditioning_value(&self) -> f64 {
        match *self {
            System::Logistic { r } => r,
            System::Lorenz { rho, .. } => rho,
            System::Kolmogorov { amplitude, .. } => amplitude,
        }
    }
}

/// Default desk-scale flow configuration.
pub fn default_kolmogorov(amplitude: f64) -> System {
    System::Kolmogorov {
        viscosity: DEFAULT_VISCOSITY,
        forcing_wavenumber: DEFAULT_FORCING_WAVENUMBER,
        amplitude,
        dt_solver: DEFAULT_DT_SOLVER,
        h: 32,
        w: 32,
    }
}

pub const DEFAULT_VISCOSITY: f64 = 0.05;
pub const DEFAULT_FORCING_WAVENUMBER: usize = 4;
pub const DEFAULT_DT_SOLVER: f64 = 0.005;
pub const DEFAULT_STRIDE: usize = 20;
pub const DEFAULT_BURN_IN: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemParams {
    pub system: System,
    pub seed: u64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PaintError::invalid(m));
        match self.system {
            System::Logistic { r } if !(r > 0.0 && r <= 4.0) => bad(format!("logistic r = {r} outside (0, 4]")),
            System::Lorenz { dt, .. } if !(dt > 0.0 && dt <= 1e-2) => bad(format!("Lorenz dt = {dt} outside (0, 1e-2]")),
            System::Kolmogorov { viscosity, dt_solver, h, w, forcing_wavenumber, amplitude } => {
                if !(viscosity > 0.0) || !(dt_solver > 0.0) || !amplitude.is_finite() {
                    return bad("flow needs viscosity > 0, dt_solver > 0, finite amplitude".into());
                }
                if !h.is_power_of_two() || !w.is_power_of_two() || h < 8 || w < 8 {
                    return bad(format!("flow grid {h}x{w} must be power-of-two sides >= 8"));
                }
                if forcing_wavenumber == 0 || forcing_wavenumber > h / 3 {
                    return bad(format!("forcing wavenumber {forcing_wavenumber} not resolved on {h} rows"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Ordered states at a constant stored timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T, S = Field2D<T>> {
    pub frames: Vec<S>,
    /// Physical time between stored frames.
    pub dt: T,
    pub params: SystemParams,
    /// Reference velocity the frames are divided by before learning.
    pub normalization: T,
}

impl<T: Scalar, S> Trajectory<T, S> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl<T: Scalar> Trajectory<T> {
    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    /// Frames `[start, end)` as a new trajectory with the same metadata.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames.len() {
            return Err(PaintError::invalid(format!(
                "slice [{start}, {end}) outside trajectory of {} frames",
                self.frames.len()
            )));
        }
        Ok(Trajectory {
            frames: self.frames[start..end].to_vec(),
            dt: self.dt,
            params: self.params,
            normalization: self.normalization,
        })
    }
}

/// Row index where the forcing profile `sin(k_f y)` peaks.
pub fn forcing_peak_row(h: usize, forcing_wavenumber: usize) -> usize {
    let kf = forcing_wavenumber as f64;
    (0..h)
        .max_by(|&a, &b| {
            let s = |i: usize| (kf * std::f64::consts::TAU * i as f64 / h as f64).sin();
            s(a).partial_cmp(&s(b)).unwrap().then(b.cmp(&a))
        })
        .unwrap_or(0)
}

/// Time-mean velocity amplitude of the forcing scale: the RMS velocity
/// carried by wavenumber shell `k_f`, averaged over frames. Flow frames are
/// divided by this before learning.
pub fn forcing_scale_velocity<T: Scalar>(frames: &[Field2D<T>], forcing_wavenumber: usize) -> Result<T> {
    let (h, w) = (frames[0].height(), frames[0].width());
    let plan = fft::Fft2Plan::<T>::new(h, w)?;
    let nn = T::from_usize_lossy(h * w);
    let mut acc = T::zero();
    for f in frames {
        let uh = plan.forward_real(f.u())?;
        let vh = plan.forward_real(f.v())?;
        let mut e = T::zero();
        for i in 0..h {
            let ky = fft::wavenumber(i, h) as f64;
            for j in 0..w {
                let kx = fft::wavenumber(j, w) as f64;
                if (kx * kx + ky * ky).sqrt().round() as usize == forcing_wavenumber {
                    let k = i * w + j;
                    e += (uh[k].norm_sqr() + vh[k].norm_sqr()) / (nn * nn);
                }
            }
        }
        acc += e.sqrt();
    }
    let mean = acc / T::from_usize_lossy(frames.len());
    Ok(if mean > c(1e-8) { mean } else { T::one() })
}

/// Band-limited random initial velocity with unit RMS speed.
pub fn random_flow<T: Scalar>(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<Field2D<T>> {
    let plan = fft::Fft2Plan::<T>::new(h, w)?;
    let noise: Vec<T> = (0..h * w).map(|_| standard_normal(rng)).collect();
    let mut wh = plan.forward_real(&noise)?;
    for i in 0..h {
        let ky = fft::wavenumber(i, h);
        for j in 0..w {
            let kx = fft::wavenumber(j, w);
            let k2 = kx * kx + ky * ky;
            if k2 == 0 || k2 > 25 {
                wh[i * w + j] = num_complex::Complex::new(T::zero(), T::zero());
            }
        }
    }
    let solver = KolmogorovSolver::new(
        h,
        w,
        KolmogorovParams { viscosity: T::zero(), forcing_wavenumber: 1, amplitude: T::zero() },
    )?;
    let f = solver.velocity(&wh, [T::zero(), T::zero()])?;
    let rms = (f.kinetic_energy() * c(2.0)).sqrt();
    Ok(f.scaled(T::one() / rms))
}

/// Integrates a flow from a seeded random initial condition, discarding
/// `burn_in` solver steps and storing every `stride`-th step afterwards.
pub fn simulate_flow<T: Scalar>(
    params: SystemParams,
    n_frames: usize,
    burn_in: usize,
    stride: usize,
) -> Result<Trajectory<T>> {
    params.validate()?;
    let System::Kolmogorov { viscosity, forcing_wavenumber, amplitude, h, w, .. } = params.system else {
        return Err(PaintError::invalid(format!("{} is not a flow system", params.system.name())));
    };
    if n_frames == 0 || stride == 0 {
        return Err(PaintError::invalid("n_frames and stride must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = random_flow::<T>(h, w, &mut rng)?;
    let kp = KolmogorovParams { viscosity: c(viscosity), forcing_wavenumber, amplitude: c(amplitude) };
    simulate_flow_from(params, kp, init, n_frames, burn_in, stride)
}

/// As [`simulate_flow`], from a caller-supplied initial velocity.
pub fn simulate_flow_from<T: Scalar>(
    params: SystemParams,
    kp: KolmogorovParams<T>,
    init: Field2D<T>,
    n_frames: usize,
    burn_in: usize,
    stride: usize,
) -> Result<Trajectory<T>> {
    let System::Kolmogorov { dt_solver, .. } = params.system else {
        return Err(PaintError::invalid("not a flow system"));
    };
    let solver = KolmogorovSolver::new(init.height(), init.width(), kp)?;
    let dt = c::<T>(dt_solver);
    let (mut wh, mean) = solver.vorticity_hat(&init)?;
    let mut step = 0usize;
    let mut advance = |wh: &mut Vec<_>, n: usize| -> Result<()> {
        for _ in 0..n {
            solver.advance(wh, mean, dt).map_err(|e| PaintError::Numerical {
                step,
                detail: format!("seed {}: {e}", params.seed),
            })?;
            step += 1;
        }
        Ok(())
    };
    advance(&mut wh, burn_in)?;
    let mut frames = Vec::with_capacity(n_frames);
    frames.push(solver.velocity(&wh, mean)?);
    for _ in 1..n_frames {
        advance(&mut wh, stride)?;
        frames.push(solver.velocity(&wh, mean)?);
    }
    let normalization = forcing_scale_velocity(&frames, kp.forcing_wavenumber)?;
    Ok(Trajectory {
        frames,
        dt: dt * T::from_usize_lossy(stride),
        params,
        normalization,
    })
}

/// Simulates the logistic map or Lorenz-63 from a seeded random start.
pub fn simulate_vector<T: Scalar>(
    params: SystemParams,
    n_frames: usize,
    burn_in: usize,
    stride: usize,
) -> Result<Trajectory<T, Vec<T>>> {
    params.validate()?;
    if n_frames == 0 || stride == 0 {
        return Err(PaintError::invalid("n_frames and stride must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (mut state, dt): (Vec<T>, T) = match params.system {
        System::Logistic { .. } => (vec![c(rng.gen_range(0.05..0.95))], T::one()),
        System::Lorenz { dt, .. } => (
            (0..3).map(|_| c::<T>(1.0) + standard_normal::<T, _>(&mut rng)).collect(),
            c(dt),
        ),
        System::Kolmogorov { .. } => {
            return Err(PaintError::invalid("use simulate_flow for the flow system"));
        }
    };
    let step = |s: &[T]| -> Result<Vec<T>> {
        match params.system {
            System::Logistic { r } => Ok(vec![logistic_step(s[0], c(r))?]),
            System::Lorenz { sigma, rho, beta, dt } => {
                let p = LorenzParams { sigma: c(sigma), rho: c(rho), beta: c(beta) };
                Ok(lorenz_step([s[0], s[1], s[2]], c(dt), &p)?.to_vec())
            }
            System::Kolmogorov { .. } => unreachable!(),
        }
    };
    for _ in 0..burn_in {
        state = step(&state)?;
    }
    let mut frames = vec![state.clone()];
    for _ in 1..n_frames {
        for _ in 0..stride {
            state = step(&state)?;
        }
        frames.push(state.clone());
    }
    Ok(Trajectory {
        frames,
        dt: dt * T::from_usize_lossy(stride),
        params,
        normalization: T::one(),
    })
}
