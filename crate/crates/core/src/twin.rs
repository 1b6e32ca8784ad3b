//! Test-time twin: sliding-window state estimation from a measurement
//! stream, ensembles over sampler seeds, and the autoregressive rollout used
//! as a baseline.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataio::write_trajectory;
use crate::dynsys::{Field2D, SystemParams, Trajectory};
use crate::error::{PaintError, Result};
use crate::generative::{ar_step, fm_sample_encoded, ArModel, WindowModel, DEFAULT_SAMPLE_STEPS};
use crate::scalar::{c, Scalar};
use crate::sensing::{emit, encode_padded, MaskedWindowEncoding, MeasurementWindow, ProbeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwinMode {
    /// One sample per disjoint window; all its frames are kept.
    Sequence,
    /// One sample per time step; only the newest frame is kept.
    SlidingSingle,
}

impl fmt::Display for TwinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TwinMode::Sequence => "sequence",
            TwinMode::SlidingSingle => "sliding-single",
        })
    }
}

impl FromStr for TwinMode {
    type Err = PaintError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(TwinMode::Sequence),
            "sliding-single" => Ok(TwinMode::SlidingSingle),
            _ => Err(PaintError::invalid(format!("unknown twin mode '{s}' (sequence | sliding-single)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwinConfig {
    /// Measured frames per window. May be shorter than the model's history
    /// slots; the earliest slots are then left unmeasured.
    pub history: usize,
    /// Forecast frames the model window carries after its history.
    pub forecast: usize,
    pub mode: TwinMode,
    pub n_seeds: usize,
    /// Euler steps per sample.
    pub steps: usize,
    pub seed: u64,
    /// Velocity scale the model was trained in; stream values are divided
    /// by it and estimates multiplied back.
    pub normalization: f64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            history: 8,
            forecast: 4,
            mode: TwinMode::Sequence,
            n_seeds: 10,
            steps: DEFAULT_SAMPLE_STEPS,
            seed: 0,
            normalization: 1.0,
        }
    }
}

impl TwinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.n_seeds == 0 || self.steps == 0 {
            return Err(PaintError::invalid("twin needs history >= 1, n_seeds >= 1 and steps >= 1"));
        }
        if !(self.normalization > 0.0 && self.normalization.is_finite()) {
            return Err(PaintError::invalid(format!("normalization {} must be positive", self.normalization)));
        }
        Ok(())
    }

    /// History slots of a model window under this config.
    fn model_history<T: Scalar>(&self, model: &WindowModel<T>) -> Result<usize> {
        self.validate()?;
        let frames = model.config.frames;
        if self.forecast >= frames || self.history > frames - self.forecast {
            return Err(PaintError::invalid(format!(
                "history {} + forecast {} does not fit the model window of {frames} frames",
                self.history, self.forecast
            )));
        }
        Ok(frames - self.forecast)
    }
}

/// Estimated frames with their absolute position in the stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction<T> {
    pub frames: Vec<Field2D<T>>,
    /// Absolute time index of `frames[0]`.
    pub t_start: usize,
    /// Trailing frames that lie beyond the last measurement.
    pub forecast: usize,
}

/// Frames `[start, start + len)` of a window, `start` relative to it.
pub fn sub_window<T: Scalar>(mw: &MeasurementWindow<T>, start: usize, len: usize) -> Result<MeasurementWindow<T>> {
    if len == 0 || start + len > mw.window_length {
        return Err(PaintError::invalid(format!(
            "frames [{start}, {}) outside a stream of {} frames",
            start + len,
            mw.window_length
        )));
    }
    let stride = mw.probes.len() * 2;
    Ok(MeasurementWindow {
        values: mw.values[start * stride..(start + len) * stride].to_vec(),
        probes: mw.probes.clone(),
        t_start: mw.t_start + start,
        window_length: len,
    })
}

fn scaled_window<T: Scalar>(mw: &MeasurementWindow<T>, s: T) -> MeasurementWindow<T> {
    MeasurementWindow { values: mw.values.iter().map(|&x| x * s).collect(), ..mw.clone() }
}

/// Encoding of `len` measured frames ending just before `end` (relative),
/// placed in history slots `[slots − len, slots)` of a `frames`-long window.
fn window_encoding<T: Scalar>(
    stream: &MeasurementWindow<T>,
    end: usize,
    len: usize,
    slots: usize,
    frames: usize,
    inv_norm: T,
) -> Result<MaskedWindowEncoding<T>> {
    let (h, w) = stream.probes.grid();
    let mw = scaled_window(&sub_window(stream, end - len, len)?, inv_norm);
    let enc = encode_padded(&mw, (h, w), len)?;
    let hw = h * w;
    let offset = slots - len;
    let mut mask = vec![T::zero(); frames * hw];
    let mut values = vec![T::zero(); frames * 2 * hw];
    mask[offset * hw..(offset + len) * hw].copy_from_slice(&enc.mask);
    values[offset * 2 * hw..(offset + len) * 2 * hw].copy_from_slice(&enc.values);
    Ok(MaskedWindowEncoding { frames, h, w, mask, values })
}

/// Sampler seed of the window whose newest measured frame is at absolute
/// time `t`; depends on nothing else, so estimates are local in time.
pub fn window_seed(seed: u64, member: usize, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((member as u64) << 40) ^ t as u64
}

fn sample_window<T: Scalar>(
    model: &WindowModel<T>,
    stream: &MeasurementWindow<T>,
    cfg: &TwinConfig,
    slots: usize,
    end: usize,
    member: usize,
) -> Result<Vec<Field2D<T>>> {
    let inv = c::<T>(1.0 / cfg.normalization);
    let enc = window_encoding(stream, end, cfg.history, slots, model.config.frames, inv)?;
    let t_abs = stream.t_start + end - 1;
    let frames = fm_sample_encoded(model, &enc, cfg.steps, window_seed(cfg.seed, member, t_abs))?;
    let s = c::<T>(cfg.normalization);
    Ok(frames.iter().map(|f| f.scaled(s)).collect())
}

/// Reconstruction by one ensemble member (`member` selects its seeds).
pub fn reconstruct_member<T: Scalar>(
    model: &WindowModel<T>,
    stream: &MeasurementWindow<T>,
    cfg: &TwinConfig,
    member: usize,
) -> Result<Reconstruction<T>> {
    let slots = cfg.model_history(model)?;
    let (len, h) = (stream.window_length, cfg.history);
    if len < h {
        return Err(PaintError::invalid(format!("stream of {len} frames is shorter than the window history {h}")));
    }
    if stream.probes.grid() != model.config.grid {
        return Err(PaintError::shape(
            "reconstruct",
            format!("stream on {:?}, model on {:?}", stream.probes.grid(), model.config.grid),
        ));
    }
    match cfg.mode {
        TwinMode::Sequence => {
            // disjoint windows; a final window flush with the stream end
            // covers any remainder
            let mut ends: Vec<usize> = (1..=len / h).map(|k| k * h).collect();
            if len % h != 0 {
                ends.push(len);
            }
            let windows: Vec<Vec<Field2D<T>>> = ends
                .par_iter()
                .map(|&end| sample_window(model, stream, cfg, slots, end, member))
                .collect::<Result<_>>()?;
            let mut frames = Vec::with_capacity(len + cfg.forecast);
            let mut covered = 0;
            for (i, (&end, win)) in ends.iter().zip(windows).enumerate() {
                let fresh = end - covered;
                let last = i + 1 == ends.len();
                let stop = if last { slots + cfg.forecast } else { slots };
                frames.extend(win[slots - fresh..stop].iter().cloned());
                covered = end;
            }
            Ok(Reconstruction { frames, t_start: stream.t_start, forecast: cfg.forecast })
        }
        TwinMode::SlidingSingle => {
            let frames = (h..=len)
                .into_par_iter()
                .map(|end| Ok(sample_window(model, stream, cfg, slots, end, member)?.swap_remove(slots - 1)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Reconstruction { frames, t_start: stream.t_start + h - 1, forecast: 0 })
        }
    }
}

/// Single-member reconstruction. Estimates never read earlier estimates.
pub fn reconstruct<T: Scalar>(model: &WindowModel<T>, stream: &MeasurementWindow<T>, cfg: &TwinConfig) -> Result<Reconstruction<T>> {
    reconstruct_member(model, stream, cfg, 0)
}

/// Per-pixel mean and standard deviation over sampler seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleEstimate<T> {
    pub mean: Vec<Field2D<T>>,
    /// Population standard deviation over members (zero for one member).
    pub std: Vec<Field2D<T>>,
    pub members: Option<Vec<Reconstruction<T>>>,
    pub t_start: usize,
    pub forecast: usize,
}

pub fn ensemble<T: Scalar>(
    model: &WindowModel<T>,
    stream: &MeasurementWindow<T>,
    cfg: &TwinConfig,
    keep_members: bool,
) -> Result<EnsembleEstimate<T>> {
    cfg.validate()?;
    let members: Vec<Reconstruction<T>> =
        (0..cfg.n_seeds).map(|m| reconstruct_member(model, stream, cfg, m)).collect::<Result<_>>()?;
    let n = T::from_usize_lossy(members.len());
    let first = &members[0];
    let (h, w) = (first.frames[0].height(), first.frames[0].width());
    let mut mean = Vec::with_capacity(first.frames.len());
    let mut std = Vec::with_capacity(first.frames.len());
    for f in 0..first.frames.len() {
        let mut mu = vec![T::zero(); 2 * h * w];
        for m in &members {
            for (a, b) in mu.iter_mut().zip(m.frames[f].to_channels()) {
                *a += b / n;
            }
        }
        let mut var = vec![T::zero(); 2 * h * w];
        for m in &members {
            for ((a, b), &mm) in var.iter_mut().zip(m.frames[f].to_channels()).zip(&mu) {
                *a += (b - mm) * (b - mm) / n;
            }
        }
        mean.push(Field2D::from_channels(h, w, &mu)?);
        std.push(Field2D::from_channels(h, w, &var.iter().map(|v| v.sqrt()).collect::<Vec<_>>())?);
    }
    let (t_start, forecast) = (first.t_start, first.forecast);
    Ok(EnsembleEstimate { mean, std, members: keep_members.then_some(members), t_start, forecast })
}

/// Sliding-single estimator that keeps its past outputs. The outputs are
/// stored only so that tests can tamper with them: nothing reads them back.
pub struct SlidingTwin<'a, T> {
    model: &'a WindowModel<T>,
    cfg: TwinConfig,
    outputs: Vec<Field2D<T>>,
}

impl<'a, T: Scalar> SlidingTwin<'a, T> {
    pub fn new(model: &'a WindowModel<T>, cfg: TwinConfig) -> Result<Self> {
        cfg.model_history(model)?;
        Ok(SlidingTwin { model, cfg, outputs: Vec::new() })
    }

    /// Estimate at absolute time `t` from the stream frames `[t − h + 1, t]`.
    pub fn advance(&mut self, stream: &MeasurementWindow<T>, t: usize) -> Result<Field2D<T>> {
        let h = self.cfg.history;
        if t < stream.t_start + h - 1 || t >= stream.t_start + stream.window_length {
            return Err(PaintError::invalid(format!("no full window of {h} measurements ends at t = {t}")));
        }
        let slots = self.cfg.model_history(self.model)?;
        let end = t - stream.t_start + 1;
        let est = sample_window(self.model, stream, &self.cfg, slots, end, 0)?.swap_remove(slots - 1);
        self.outputs.push(est.clone());
        Ok(est)
    }

    pub fn outputs(&self) -> &[Field2D<T>] {
        &self.outputs
    }

    pub fn outputs_mut(&mut self) -> &mut [Field2D<T>] {
        &mut self.outputs
    }
}

/// Largest change of the estimate at `t` when every earlier estimate is
/// shifted by `delta` before `t` is processed. Zero means no recurrence.
pub fn prior_output_sensitivity<T: Scalar>(
    model: &WindowModel<T>,
    stream: &MeasurementWindow<T>,
    cfg: &TwinConfig,
    t: usize,
    delta: T,
) -> Result<f64> {
    let first = stream.t_start + cfg.history - 1;
    let mut clean = SlidingTwin::new(model, *cfg)?;
    let mut tampered = SlidingTwin::new(model, *cfg)?;
    for s in first..t {
        clean.advance(stream, s)?;
        tampered.advance(stream, s)?;
    }
    for f in tampered.outputs_mut() {
        f.u_mut().iter_mut().for_each(|x| *x += delta);
        f.v_mut().iter_mut().for_each(|x| *x += delta);
    }
    let a = clean.advance(stream, t)?;
    let b = tampered.advance(stream, t)?;
    Ok(a.u()
        .iter()
        .chain(a.v())
        .zip(b.u().iter().chain(b.v()))
        .map(|(&x, &y)| (x - y).as_f64().abs())
        .fold(0.0, f64::max))
}

/// `steps` AR predictions from ground-truth `initial` states (oldest first,
/// physical units); step `k` sees measurement frame `k` of `stream`, which
/// must start right after the last initial state. Returns the initial
/// states followed by the predictions.
pub fn ar_rollout<T: Scalar>(
    model: &ArModel<T>,
    initial: &[Field2D<T>],
    stream: &MeasurementWindow<T>,
    steps: usize,
    normalization: f64,
) -> Result<Vec<Field2D<T>>> {
    if !(normalization > 0.0) {
        return Err(PaintError::invalid("normalization must be positive"));
    }
    if steps > stream.window_length {
        return Err(PaintError::invalid(format!(
            "rollout of {steps} steps needs {steps} measured frames, stream has {}",
            stream.window_length
        )));
    }
    let (inv, s) = (c::<T>(1.0 / normalization), c::<T>(normalization));
    let mut out: Vec<Field2D<T>> = initial.to_vec();
    let mut ctx: Vec<Field2D<T>> = initial.iter().map(|f| f.scaled(inv)).collect();
    for k in 0..steps {
        let mw = scaled_window(&sub_window(stream, k, 1)?, inv);
        let enc = encode_padded(&mw, model.config.grid, 1)?;
        let next = ar_step(model, &ctx, &enc).map_err(|e| PaintError::Numerical { step: k, detail: e.to_string() })?;
        if !next.is_finite() {
            return Err(PaintError::Numerical { step: k, detail: "non-finite AR state".into() });
        }
        out.push(next.scaled(s));
        ctx.remove(0);
        ctx.push(next);
    }
    Ok(out)
}

/// Twin estimates of frames `[t0, t0 + len)` of `traj`, measured through
/// `probes`. Sliding-single mode reads the `history − 1` frames before `t0`
/// as well; sequence mode starts its first window at `t0`.
#[allow(clippy::too_many_arguments)]
pub fn track<T: Scalar>(
    model: &WindowModel<T>,
    traj: &Trajectory<T>,
    probes: &ProbeSet,
    cfg: &TwinConfig,
    t0: usize,
    len: usize,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<EnsembleEstimate<T>> {
    let lead = match cfg.mode {
        TwinMode::Sequence => 0,
        TwinMode::SlidingSingle => cfg.history.saturating_sub(1),
    };
    if t0 < lead {
        return Err(PaintError::invalid(format!("t0 = {t0} leaves no room for {lead} earlier measured frames")));
    }
    let stream = emit(traj, probes, t0 - lead, len + lead, c(noise_sigma), noise_seed)?;
    let mut est = ensemble(model, &stream, cfg, false)?;
    debug_assert_eq!(est.t_start, t0);
    est.mean.truncate(len);
    est.std.truncate(len);
    est.forecast = 0;
    Ok(est)
}

/// AR rollout over frames `[t0, t0 + len)` of `traj`, started from the true
/// states just before `t0`.
pub fn ar_track<T: Scalar>(
    model: &ArModel<T>,
    traj: &Trajectory<T>,
    probes: &ProbeSet,
    t0: usize,
    len: usize,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<Vec<Field2D<T>>> {
    let ctx = model.config.context;
    if t0 < ctx {
        return Err(PaintError::invalid(format!("t0 = {t0} leaves no room for {ctx} context states")));
    }
    let stream = emit(traj, probes, t0, len, c(noise_sigma), noise_seed)?;
    let mut out = ar_rollout(model, &traj.frames[t0 - ctx..t0], &stream, len, traj.normalization.as_f64())?;
    out.drain(..ctx);
    Ok(out)
}

/// Sidecar path for the std field of an estimate file.
pub fn std_sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("estimate");
    path.with_file_name(format!("{stem}.std.ptrj"))
}

/// Writes the ensemble mean as a trajectory file and the std next to it.
pub fn write_estimate<T: Scalar>(
    path: &Path,
    est: &EnsembleEstimate<T>,
    dt: T,
    params: SystemParams,
    normalization: T,
) -> Result<PathBuf> {
    let mean = Trajectory { frames: est.mean.clone(), dt, params, normalization };
    write_trajectory(path, &mean)?;
    let side = std_sidecar(path);
    write_trajectory(&side, &Trajectory { frames: est.std.clone(), ..mean })?;
    Ok(side)
}
