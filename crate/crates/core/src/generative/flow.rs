//! Conditional flow matching with a data-coupled source: probe pixels start
//! at their measured values, everything else at unit Gaussian noise, and the
//! model regresses the straight-line velocity `x_1 − x_0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{WindowModel, STATE_CHANNELS};
use crate::dataio::WindowSample;
use crate::dynsys::Field2D;
use crate::error::{PaintError, Result};
use crate::scalar::{c, standard_normal, Scalar};
use crate::sensing::{encode_padded, MaskedWindowEncoding, MeasurementWindow, ProbeSet};
use crate::tensor::{Tape, Var};

pub const DEFAULT_WEIGHT_ALPHA: f64 = 9.0;
pub const DEFAULT_WEIGHT_SIGMA: f64 = 2.0;
pub const DEFAULT_SAMPLE_STEPS: usize = 20;

/// Per-pixel loss weights `1 + α exp(−d² / 2σ²)`, `d` the distance to the
/// nearest probe in grid units.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialWeightMap<T> {
    pub alpha: T,
    pub sigma: T,
    pub grid: (usize, usize),
    pub weights: Vec<T>,
}

impl<T: Scalar> SpatialWeightMap<T> {
    pub fn new(probes: &ProbeSet, alpha: T, sigma: T) -> Result<Self> {
        if !(alpha >= T::zero() && sigma > T::zero()) {
            return Err(PaintError::invalid(format!("weight map needs alpha >= 0 and sigma > 0, got {alpha}, {sigma}")));
        }
        let (h, w) = probes.grid();
        let two_s2 = c::<T>(2.0) * sigma * sigma;
        let weights = (0..h * w)
            .map(|px| {
                let (r, col) = ((px / w) as i64, (px % w) as i64);
                let d2 = probes
                    .positions()
                    .iter()
                    .map(|&(pr, pc)| (pr as i64 - r).pow(2) + (pc as i64 - col).pow(2))
                    .min()
                    .unwrap_or(0);
                T::one() + alpha * (-T::from_usize_lossy(d2 as usize) / two_s2).exp()
            })
            .collect();
        Ok(SpatialWeightMap { alpha, sigma, grid: (h, w), weights })
    }

    pub fn uniform(grid: (usize, usize)) -> Self {
        SpatialWeightMap {
            alpha: T::zero(),
            sigma: T::one(),
            grid,
            weights: vec![T::one(); grid.0 * grid.1],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.weights[row * self.grid.1 + col]
    }
}

/// Unit Gaussian draw shaped like a state window.
pub fn gaussian_noise<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Data-coupled source `x_0`: measured values where the mask is set, the
/// given noise elsewhere (including every unmeasured frame).
pub fn coupled_source<T: Scalar>(enc: &MaskedWindowEncoding<T>, noise: &[T]) -> Result<Vec<T>> {
    let hw = enc.h * enc.w;
    if noise.len() != enc.frames * STATE_CHANNELS * hw {
        return Err(PaintError::shape(
            "coupled_source",
            format!("noise of {} values for {} frames of {}x{}", noise.len(), enc.frames, enc.h, enc.w),
        ));
    }
    let mut x0 = noise.to_vec();
    for f in 0..enc.frames {
        for px in 0..hw {
            if enc.mask[f * hw + px] == T::one() {
                for ch in 0..STATE_CHANNELS {
                    let i = (f * STATE_CHANNELS + ch) * hw + px;
                    x0[i] = enc.values[i];
                }
            }
        }
    }
    Ok(x0)
}

/// Linear interpolant `(1 − τ) x_0 + τ x_1`.
pub fn interpolate<T: Scalar>(x0: &[T], x1: &[T], tau: T) -> Vec<T> {
    x0.iter().zip(x1).map(|(&a, &b)| (T::one() - tau) * a + tau * b).collect()
}

/// Records `mean(w ⊙ (pred − target)²)` with `w` broadcast over the leading
/// axes of `pred`.
pub fn weighted_mse<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[T], weights: &[T], weight_shape: &[usize]) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    let t = tape.constant(&shape, target.to_vec())?;
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let w = tape.constant(weight_shape, weights.to_vec())?;
    let wsq = tape.mul(sq, w)?;
    tape.mean(wsq)
}

/// Records the flow-matching loss for one window. `x1` is the true
/// `[frames, 2, H, W]` window, `enc` its (padded) measurement encoding.
#[allow(clippy::too_many_arguments)]
pub fn fm_loss_on_tape<T: Scalar>(
    model: &WindowModel<T>,
    tape: &mut Tape<T>,
    p: &[Var],
    x1: &[T],
    enc: &MaskedWindowEncoding<T>,
    tau: T,
    noise: &[T],
    weights: &SpatialWeightMap<T>,
) -> Result<Var> {
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(PaintError::invalid(format!("flow time {tau} outside [0, 1]")));
    }
    let shape = model.state_shape();
    if x1.len() != shape.iter().product::<usize>() || enc.frames != shape[0] || (enc.h, enc.w) != (shape[2], shape[3]) {
        return Err(PaintError::shape("fm_loss", format!("window of {} values for model shape {shape:?}", x1.len())));
    }
    if weights.grid != (shape[2], shape[3]) {
        return Err(PaintError::shape("fm_loss", format!("weights on {:?}", weights.grid)));
    }
    let x0 = coupled_source(enc, noise)?;
    let xt = interpolate(&x0, x1, tau);
    let target: Vec<T> = x1.iter().zip(&x0).map(|(&a, &b)| a - b).collect();
    let xt = tape.constant(&shape, xt)?;
    let e = tape.constant(&[shape[0], 3, shape[2], shape[3]], enc.to_channels())?;
    let v = model.forward(tape, p, xt, tau, e)?;
    weighted_mse(tape, v, &target, &weights.weights, &[shape[2], shape[3]])
}

/// Flow-matching loss value for a window sample.
pub fn fm_loss<T: Scalar>(
    model: &WindowModel<T>,
    sample: &WindowSample<T>,
    tau: T,
    noise: &[T],
    weights: &SpatialWeightMap<T>,
) -> Result<T> {
    let enc = encode_padded(&sample.measurements, model.config.grid, model.config.frames)?;
    let mut tape = Tape::new();
    let p = super::model::bind_frozen(&model.params, &mut tape)?;
    let loss = fm_loss_on_tape(model, &mut tape, &p, &sample.state_channels(), &enc, tau, noise, weights)?;
    Ok(tape.value(loss)[0])
}

/// Forward Euler from `τ = 0` to `τ = 1` in `steps` equal steps.
pub fn euler_integrate<T: Scalar>(
    mut x: Vec<T>,
    steps: usize,
    mut velocity: impl FnMut(&[T], T) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    if steps == 0 {
        return Err(PaintError::invalid("sampler needs at least one step"));
    }
    let dt = T::one() / T::from_usize_lossy(steps);
    for step in 0..steps {
        let tau = T::from_usize_lossy(step) * dt;
        let v = velocity(&x, tau).map_err(|e| PaintError::Numerical { step, detail: e.to_string() })?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += *vi * dt;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PaintError::Numerical { step, detail: "non-finite sampler state".into() });
        }
    }
    Ok(x)
}

/// Samples a state window from an encoding. Reads only the encoding, the
/// model parameters and the seed.
pub fn fm_sample_encoded<T: Scalar>(
    model: &WindowModel<T>,
    enc: &MaskedWindowEncoding<T>,
    steps: usize,
    seed: u64,
) -> Result<Vec<Field2D<T>>> {
    let [f, ch, h, w] = model.state_shape();
    if enc.frames != f || (enc.h, enc.w) != (h, w) {
        return Err(PaintError::shape(
            "fm_sample",
            format!("encoding {}x{}x{} for model window {f}x{h}x{w}", enc.frames, enc.h, enc.w),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = gaussian_noise(f * ch * h * w, &mut rng);
    let x0 = coupled_source(enc, &noise)?;
    let cond = enc.to_channels();
    let x = euler_integrate(x0, steps, |x, tau| model.velocity(x, tau, &cond))?;
    x.chunks(ch * h * w).map(|fr| Field2D::from_channels(h, w, fr)).collect()
}

/// Samples `x̂_{[t−h+1, t+n]}` given the measurements of its first `h` frames.
pub fn fm_sample<T: Scalar>(
    model: &WindowModel<T>,
    measurements: &MeasurementWindow<T>,
    steps: usize,
    seed: u64,
) -> Result<Vec<Field2D<T>>> {
    let enc = encode_padded(measurements, model.config.grid, model.config.frames)?;
    fm_sample_encoded(model, &enc, steps, seed)
}
