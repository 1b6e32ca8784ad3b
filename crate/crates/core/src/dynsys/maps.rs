//! Low-dimensional chaotic testbeds: the logistic map and Lorenz-63.

use crate::error::{PaintError, Result};
use crate::scalar::{c, Scalar};

/// One iterate `r·x·(1−x)` of the logistic map.
pub fn logistic_step<T: Scalar>(x: T, r: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(PaintError::invalid(format!("logistic state {x} outside [0, 1]")));
    }
    if !(r > T::zero() && r <= c(4.0)) {
        return Err(PaintError::invalid(format!("logistic parameter r = {r} outside (0, 4]")));
    }
    Ok(r * x * (T::one() - x))
}

/// Derivative of the logistic map, `r(1 − 2x)`.
pub fn logistic_derivative<T: Scalar>(x: T, r: T) -> T {
    r * (T::one() - x - x)
}

/// Lyapunov exponent estimate `mean(log|r(1−2x_t)|)` along an orbit of
/// `steps` iterates after discarding `burn_in`.
pub fn logistic_lyapunov<T: Scalar>(x0: T, r: T, burn_in: usize, steps: usize) -> Result<T> {
    let mut x = x0;
    for _ in 0..burn_in {
        x = logistic_step(x, r)?;
    }
    let mut acc = T::zero();
    for _ in 0..steps {
        acc += logistic_derivative(x, r).abs().ln();
        x = logistic_step(x, r)?;
    }
    Ok(acc / T::from_usize_lossy(steps))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorenzParams<T> {
    pub sigma: T,
    pub rho: T,
    pub beta: T,
}

impl<T: Scalar> Default for LorenzParams<T> {
    fn default() -> Self {
        LorenzParams {
            sigma: c(10.0),
            rho: c(28.0),
            beta: c(8.0 / 3.0),
        }
    }
}

fn lorenz_rhs<T: Scalar>(s: [T; 3], p: &LorenzParams<T>) -> [T; 3] {
    [
        p.sigma * (s[1] - s[0]),
        s[0] * (p.rho - s[2]) - s[1],
        s[0] * s[1] - p.beta * s[2],
    ]
}

fn axpy3<T: Scalar>(a: [T; 3], k: [T; 3], h: T) -> [T; 3] {
    [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2]]
}

/// One classical RK4 step of the Lorenz-63 vector field.
pub fn lorenz_step<T: Scalar>(state: [T; 3], dt: T, p: &LorenzParams<T>) -> Result<[T; 3]> {
    if state.iter().any(|x| !x.is_finite()) {
        return Err(PaintError::NonFinite { op: "lorenz_step" });
    }
    if !(dt > T::zero() && dt <= c(1e-2)) {
        return Err(PaintError::invalid(format!("Lorenz dt = {dt} must lie in (0, 1e-2]")));
    }
    let half = dt * c(0.5);
    let k1 = lorenz_rhs(state, p);
    let k2 = lorenz_rhs(axpy3(state, k1, half), p);
    let k3 = lorenz_rhs(axpy3(state, k2, half), p);
    let k4 = lorenz_rhs(axpy3(state, k3, dt), p);
    let sixth = dt / c(6.0);
    let mut out = state;
    for i in 0..3 {
        out[i] += sixth * (k1[i] + c::<T>(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(PaintError::NonFinite { op: "lorenz_step" });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_fixed_point_and_peak() {
        for r in [0.5, 2.0, 3.8, 4.0] {
            assert_eq!(logistic_step(0.0_f64, r).unwrap(), 0.0);
        }
        assert!((logistic_step(0.5_f64, 3.8).unwrap() - 0.95).abs() < 1e-15);
        assert!(logistic_step(1.5_f64, 3.8).is_err());
        assert!(logistic_step(0.5_f64, 4.5).is_err());
        assert!(logistic_step(0.5_f64, 0.0).is_err());
    }

    #[test]
    fn logistic_derivative_vanishes_at_half() {
        assert_eq!(logistic_derivative(0.5_f64, 3.8), 0.0);
    }

    #[test]
    fn lorenz_equilibrium_and_dt_guard() {
        let p = LorenzParams::<f64>::default();
        assert_eq!(lorenz_step([0.0; 3], 1e-2, &p).unwrap(), [0.0; 3]);
        assert!(lorenz_step([1.0; 3], 2e-2, &p).is_err());
        assert!(lorenz_step([f64::NAN, 0.0, 0.0], 1e-3, &p).is_err());
    }
}
