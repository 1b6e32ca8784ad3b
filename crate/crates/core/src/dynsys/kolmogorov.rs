//! Pseudo-spectral solver for 2-D incompressible flow on the periodic box
//! `[0, 2π)²` driven by the Kolmogorov body force `f = (A sin(k_f y), 0)`.
//!
//! The solver advances vorticity `ω = ∂v/∂x − ∂u/∂y`:
//! `∂ω/∂t + u·∇ω = ν∇²ω − A k_f cos(k_f y)`, with the advection term
//! dealiased by the 2/3 rule, the viscous term handled by an exact
//! integrating factor and RK4 for the rest. Velocities are recovered from the
//! streamfunction, which makes them divergence-free by construction.

use num_complex::Complex;

use super::fft::{wavenumber, Fft2Plan};
use super::Field2D;
use crate::error::{PaintError, Result};
use crate::scalar::{c, Scalar};

/// Maximum admissible `max|u|·dt/Δx`.
pub const CFL_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KolmogorovParams<T> {
    /// Kinematic viscosity ν.
    pub viscosity: T,
    /// Forcing wavenumber k_f.
    pub forcing_wavenumber: usize,
    /// Forcing amplitude A.
    pub amplitude: T,
}

type C<T> = Complex<T>;

/// Spectral operators for one grid and parameter set.
#[derive(Clone, Debug)]
pub struct KolmogorovSolver<T> {
    h: usize,
    w: usize,
    params: KolmogorovParams<T>,
    plan: Fft2Plan<T>,
    /// Derivative wavenumbers (Nyquist bin zeroed).
    kx: Vec<T>,
    ky: Vec<T>,
    k2: Vec<T>,
    dealias: Vec<bool>,
    forcing_hat: Vec<C<T>>,
    dx: T,
}

fn czero<T: Scalar>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

fn times_i<T: Scalar>(z: C<T>, k: T) -> C<T> {
    // i·k·z
    Complex::new(-k * z.im, k * z.re)
}

impl<T: Scalar> KolmogorovSolver<T> {
    pub fn new(h: usize, w: usize, params: KolmogorovParams<T>) -> Result<Self> {
        let plan = Fft2Plan::new(h, w)?;
        if !(params.viscosity >= T::zero()) {
            return Err(PaintError::invalid("viscosity must be non-negative"));
        }
        let n = h * w;
        let mut kx = vec![T::zero(); n];
        let mut ky = vec![T::zero(); n];
        let mut k2 = vec![T::zero(); n];
        let mut dealias = vec![false; n];
        let (cut_x, cut_y) = ((w / 3) as i64, (h / 3) as i64);
        for i in 0..h {
            let kyi = wavenumber(i, h);
            for j in 0..w {
                let kxj = wavenumber(j, w);
                let idx = i * w + j;
                let nyq_x = w > 1 && j == w / 2;
                let nyq_y = h > 1 && i == h / 2;
                kx[idx] = if nyq_x { T::zero() } else { T::lit(kxj as f64) };
                ky[idx] = if nyq_y { T::zero() } else { T::lit(kyi as f64) };
                k2[idx] = T::lit((kxj * kxj + kyi * kyi) as f64);
                dealias[idx] = kxj.abs() <= cut_x && kyi.abs() <= cut_y;
            }
        }
        let kf = T::from_usize_lossy(params.forcing_wavenumber);
        let two_pi = T::PI() + T::PI();
        let curl_force: Vec<T> = (0..n)
            .map(|idx| {
                let y = two_pi * T::from_usize_lossy(idx / w) / T::from_usize_lossy(h);
                -params.amplitude * kf * (kf * y).cos()
            })
            .collect();
        let mut forcing_hat = plan.forward_real(&curl_force)?;
        for (f, &keep) in forcing_hat.iter_mut().zip(&dealias) {
            if !keep {
                *f = czero();
            }
        }
        let dx = two_pi / T::from_usize_lossy(h.max(w));
        Ok(KolmogorovSolver { h, w, params, plan, kx, ky, k2, dealias, forcing_hat, dx })
    }

    pub fn params(&self) -> &KolmogorovParams<T> {
        &self.params
    }

    /// Projects a velocity field onto its (dealiased) vorticity spectrum and
    /// mean flow.
    pub fn vorticity_hat(&self, state: &Field2D<T>) -> Result<(Vec<C<T>>, [T; 2])> {
        if state.height() != self.h || state.width() != self.w {
            return Err(PaintError::shape(
                "kolmogorov",
                format!(
                    "solver grid {}x{}, state {}x{}",
                    self.h,
                    self.w,
                    state.height(),
                    state.width()
                ),
            ));
        }
        if !state.is_finite() {
            return Err(PaintError::NonFinite { op: "kolmogorov_step" });
        }
        let uh = self.plan.forward_real(state.u())?;
        let vh = self.plan.forward_real(state.v())?;
        let nn = T::from_usize_lossy(self.h * self.w);
        let mean = [uh[0].re / nn, vh[0].re / nn];
        let wh = (0..uh.len())
            .map(|k| {
                if self.dealias[k] {
                    times_i(vh[k], self.kx[k]) - times_i(uh[k], self.ky[k])
                } else {
                    czero()
                }
            })
            .collect();
        Ok((wh, mean))
    }

    /// Velocity spectra `(û, v̂)` from a vorticity spectrum and mean flow.
    fn velocity_hat(&self, wh: &[C<T>], mean: [T; 2]) -> (Vec<C<T>>, Vec<C<T>>) {
        let n = wh.len();
        let mut uh = vec![czero(); n];
        let mut vh = vec![czero(); n];
        for k in 1..n {
            if self.k2[k] == T::zero() {
                continue;
            }
            let psi = wh[k] / self.k2[k];
            uh[k] = times_i(psi, self.ky[k]);
            vh[k] = times_i(psi, -self.kx[k]);
        }
        let nn = T::from_usize_lossy(n);
        uh[0] = Complex::new(mean[0] * nn, T::zero());
        vh[0] = Complex::new(mean[1] * nn, T::zero());
        (uh, vh)
    }

    /// Velocity field for a vorticity spectrum and mean flow.
    pub fn velocity(&self, wh: &[C<T>], mean: [T; 2]) -> Result<Field2D<T>> {
        let (uh, vh) = self.velocity_hat(wh, mean);
        let u = self.plan.inverse_real(&uh)?;
        let v = self.plan.inverse_real(&vh)?;
        Field2D::new(self.h, self.w, u, v)
    }

    /// Explicit right-hand side `−(u·∇ω)^ + curl f` and the max speed seen.
    fn rhs(&self, wh: &[C<T>], mean: [T; 2]) -> Result<(Vec<C<T>>, T)> {
        let (uh, vh) = self.velocity_hat(wh, mean);
        let wxh: Vec<C<T>> = wh.iter().zip(&self.kx).map(|(&z, &k)| times_i(z, k)).collect();
        let wyh: Vec<C<T>> = wh.iter().zip(&self.ky).map(|(&z, &k)| times_i(z, k)).collect();
        let u = self.plan.inverse_real(&uh)?;
        let v = self.plan.inverse_real(&vh)?;
        let wx = self.plan.inverse_real(&wxh)?;
        let wy = self.plan.inverse_real(&wyh)?;
        let mut vmax = T::zero();
        let adv: Vec<T> = (0..u.len())
            .map(|k| {
                vmax = vmax.max(u[k].abs()).max(v[k].abs());
                u[k] * wx[k] + v[k] * wy[k]
            })
            .collect();
        if !vmax.is_finite() {
            return Err(PaintError::NonFinite { op: "kolmogorov_step" });
        }
        let advh = self.plan.forward_real(&adv)?;
        let out = (0..advh.len())
            .map(|k| {
                if self.dealias[k] {
                    self.forcing_hat[k] - advh[k]
                } else {
                    czero()
                }
            })
            .collect();
        Ok((out, vmax))
    }

    /// Courant number `max|u|·dt/Δx` for a speed bound.
    pub fn cfl(&self, max_speed: T, dt: T) -> T {
        max_speed * dt / self.dx
    }

    /// Advances a vorticity spectrum in place by one integrating-factor RK4
    /// step.
    pub fn advance(&self, wh: &mut [C<T>], mean: [T; 2], dt: T) -> Result<()> {
        if !(dt > T::zero()) {
            return Err(PaintError::invalid(format!("solver dt must be positive, got {dt}")));
        }
        let nu = self.params.viscosity;
        let half = dt * c(0.5);
        let e_full: Vec<T> = self.k2.iter().map(|&k2| (-nu * k2 * dt).exp()).collect();
        let e_half: Vec<T> = self.k2.iter().map(|&k2| (-nu * k2 * half).exp()).collect();

        let (a, vmax) = self.rhs(wh, mean)?;
        let cfl = self.cfl(vmax, dt);
        if cfl > c(CFL_LIMIT) {
            return Err(PaintError::Cfl { cfl: cfl.as_f64(), limit: CFL_LIMIT });
        }
        let n = wh.len();
        let w2: Vec<C<T>> = (0..n).map(|k| (wh[k] + a[k] * half) * e_half[k]).collect();
        let (b, _) = self.rhs(&w2, mean)?;
        let w3: Vec<C<T>> = (0..n).map(|k| wh[k] * e_half[k] + b[k] * half).collect();
        let (cc, _) = self.rhs(&w3, mean)?;
        let w4: Vec<C<T>> = (0..n).map(|k| wh[k] * e_full[k] + cc[k] * (dt * e_half[k])).collect();
        let (d, _) = self.rhs(&w4, mean)?;
        let sixth = dt / c(6.0);
        let two = c::<T>(2.0);
        for k in 0..n {
            let upd = a[k] * e_full[k] + (b[k] + cc[k]) * (two * e_half[k]) + d[k];
            wh[k] = if self.dealias[k] { wh[k] * e_full[k] + upd * sixth } else { czero() };
        }
        if wh.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(PaintError::NonFinite { op: "kolmogorov_step" });
        }
        Ok(())
    }

    /// One solver step on a velocity field.
    pub fn step(&self, state: &Field2D<T>, dt: T) -> Result<Field2D<T>> {
        let (mut wh, mean) = self.vorticity_hat(state)?;
        self.advance(&mut wh, mean, dt)?;
        self.velocity(&wh, mean)
    }

    /// Largest per-mode magnitude of the normalised divergence spectrum
    /// `|i k·û(k)| / (H W)`.
    pub fn divergence(&self, state: &Field2D<T>) -> Result<T> {
        let uh = self.plan.forward_real(state.u())?;
        let vh = self.plan.forward_real(state.v())?;
        let nn = T::from_usize_lossy(self.h * self.w);
        Ok((0..uh.len())
            .map(|k| (times_i(uh[k], self.kx[k]) + times_i(vh[k], self.ky[k])).norm() / nn)
            .fold(T::zero(), T::max))
    }
}

/// One pseudo-spectral step of the forced flow.
pub fn kolmogorov_step<T: Scalar>(state: &Field2D<T>, dt: T, params: KolmogorovParams<T>) -> Result<Field2D<T>> {
    KolmogorovSolver::new(state.height(), state.width(), params)?.step(state, dt)
}

/// Largest per-mode divergence magnitude of a velocity field.
pub fn spectral_divergence<T: Scalar>(state: &Field2D<T>) -> Result<T> {
    let p = KolmogorovParams {
        viscosity: T::zero(),
        forcing_wavenumber: 0,
        amplitude: T::zero(),
    };
    KolmogorovSolver::new(state.height(), state.width(), p)?.divergence(state)
}
