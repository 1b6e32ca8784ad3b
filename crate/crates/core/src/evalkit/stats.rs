use crate::dynsys::fft::{wavenumber, Fft2Plan};
use crate::dynsys::Field2D;
use crate::error::{PaintError, Result};
use crate::scalar::{c, Scalar};

/// Time statistics of a sequence of velocity fields.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStats<T> {
    /// Per-pixel time mean `ū` (both components).
    pub mean: Field2D<T>,
    /// Per-pixel time variance `u'²` about the mean.
    pub variance: Field2D<T>,
    /// `E(k)` for integer shells `k = 0, 1, …`.
    pub spectrum: Vec<T>,
}

/// Integer shell of a wavenumber pair, `round(|k|)`.
pub fn shell(kx: i64, ky: i64) -> usize {
    (((kx * kx + ky * ky) as f64).sqrt()).round() as usize
}

/// Radially binned `½|û(k)|²/(HW)²` of one field; sums to its mean kinetic
/// energy.
pub fn energy_spectrum<T: Scalar>(field: &Field2D<T>, plan: &Fft2Plan<T>) -> Result<Vec<T>> {
    let (h, w) = (field.height(), field.width());
    let uh = plan.forward_real(field.u())?;
    let vh = plan.forward_real(field.v())?;
    let nn = T::from_usize_lossy(h * w);
    let mut e = vec![T::zero(); shell(w as i64 / 2, h as i64 / 2) + 1];
    for i in 0..h {
        let ky = wavenumber(i, h);
        for j in 0..w {
            let kx = wavenumber(j, w);
            let k = i * w + j;
            e[shell(kx, ky)] += c::<T>(0.5) * (uh[k].norm_sqr() + vh[k].norm_sqr()) / (nn * nn);
        }
    }
    Ok(e)
}

pub fn flow_stats<T: Scalar>(frames: &[Field2D<T>]) -> Result<FlowStats<T>> {
    if frames.len() < 2 {
        return Err(PaintError::invalid(format!(
            "flow statistics need at least 2 frames for a variance, got {}",
            frames.len()
        )));
    }
    let (h, w) = (frames[0].height(), frames[0].width());
    if frames.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(PaintError::shape("flow_stats", "frames differ in grid size"));
    }
    let n = T::from_usize_lossy(frames.len());
    let mut mu = vec![T::zero(); h * w];
    let mut mv = vec![T::zero(); h * w];
    for f in frames {
        for k in 0..h * w {
            mu[k] += f.u()[k];
            mv[k] += f.v()[k];
        }
    }
    mu.iter_mut().chain(mv.iter_mut()).for_each(|x| *x /= n);
    let mut vu = vec![T::zero(); h * w];
    let mut vv = vec![T::zero(); h * w];
    for f in frames {
        for k in 0..h * w {
            vu[k] += (f.u()[k] - mu[k]).powi(2);
            vv[k] += (f.v()[k] - mv[k]).powi(2);
        }
    }
    vu.iter_mut().chain(vv.iter_mut()).for_each(|x| *x /= n);
    let plan = Fft2Plan::new(h, w)?;
    let mut spectrum: Vec<T> = Vec::new();
    for f in frames {
        let e = energy_spectrum(f, &plan)?;
        if spectrum.is_empty() {
            spectrum = vec![T::zero(); e.len()];
        }
        for (s, x) in spectrum.iter_mut().zip(e) {
            *s += x / n;
        }
    }
    Ok(FlowStats {
        mean: Field2D::new(h, w, mu, mv)?,
        variance: Field2D::new(h, w, vu, vv)?,
        spectrum,
    })
}

/// Error metrics of an estimated trajectory against the truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    /// Mean squared error of each frame over pixels and components.
    pub mse_t: Vec<f64>,
    /// Least-squares slope of `mse_t` against the frame index.
    pub slope: f64,
    pub mae_mean: f64,
    pub mae_variance: f64,
    /// Mean of `mse_t`: the whole-trajectory MSE.
    pub mse: f64,
    /// RMSE over shells between the time-mean spectra.
    pub rmse_spectrum: f64,
}

/// Ordinary least-squares slope of `y` against `0, 1, …`.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let tm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &v) in y.iter().enumerate() {
        let dt = t as f64 - tm;
        num += dt * (v - ym);
        den += dt * dt;
    }
    num / den
}

pub fn frame_mse<T: Scalar>(a: &Field2D<T>, b: &Field2D<T>) -> f64 {
    let n = (2 * a.height() * a.width()) as f64;
    a.u()
        .iter()
        .chain(a.v())
        .zip(b.u().iter().chain(b.v()))
        .map(|(&x, &y)| (x - y).as_f64().powi(2))
        .sum::<f64>()
        / n
}

fn mae<T: Scalar>(a: &Field2D<T>, b: &Field2D<T>) -> f64 {
    frame_abs(a, b) / (2 * a.height() * a.width()) as f64
}

fn frame_abs<T: Scalar>(a: &Field2D<T>, b: &Field2D<T>) -> f64 {
    a.u()
        .iter()
        .chain(a.v())
        .zip(b.u().iter().chain(b.v()))
        .map(|(&x, &y)| (x - y).as_f64().abs())
        .sum()
}

pub fn drift_report<T: Scalar>(truth: &[Field2D<T>], est: &[Field2D<T>]) -> Result<DriftReport> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(PaintError::shape(
            "drift_report",
            format!("{} true frames vs {} estimated", truth.len(), est.len()),
        ));
    }
    if truth.iter().zip(est).any(|(a, b)| a.height() != b.height() || a.width() != b.width()) {
        return Err(PaintError::shape("drift_report", "frame grids differ"));
    }
    let mse_t: Vec<f64> = truth.iter().zip(est).map(|(a, b)| frame_mse(a, b)).collect();
    let st = flow_stats(truth)?;
    let se = flow_stats(est)?;
    let rmse_spectrum = (st
        .spectrum
        .iter()
        .zip(&se.spectrum)
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        / st.spectrum.len() as f64)
        .sqrt();
    Ok(DriftReport {
        slope: ols_slope(&mse_t),
        mse: mse_t.iter().sum::<f64>() / mse_t.len() as f64,
        mse_t,
        mae_mean: mae(&st.mean, &se.mean),
        mae_variance: mae(&st.variance, &se.variance),
        rmse_spectrum,
    })
}
