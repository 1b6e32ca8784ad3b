//! Training loops for both models: seeded per-step randomness, per-element
//! tapes reduced in a fixed order, AdamW with warmup/cosine schedule,
//! CSV loss logs, and resumable checkpoints.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::flow::{fm_loss_on_tape, gaussian_noise, weighted_mse, SpatialWeightMap};
use super::model::{ArModel, WindowModel, STATE_CHANNELS};
use crate::dataio::{extract_window, read_trajectory, DatasetManifest, Split};
use crate::dynsys::{Field2D, Trajectory};
use crate::error::{PaintError, Result};
use crate::scalar::{c, Scalar};
use crate::sensing::{emit_frames, encode, encode_padded, sample_probes, MaskedWindowEncoding, ProbeKind};
use crate::tensor::{read_checkpoint, write_checkpoint, AdamW, AdamWState, LrSchedule, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub seed: u64,
    /// History frames `h` (window model) or context length (AR model).
    pub history: usize,
    /// Forecast frames `n` (window model only).
    pub forecast: usize,
    /// Random training probes per element, drawn uniformly from this range.
    pub probe_count: (usize, usize),
    /// Probability of truncating an element's measurement history to a
    /// uniformly drawn length (window model only).
    pub window_dropout: f64,
    pub weight_alpha: f64,
    pub weight_sigma: f64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch: 16,
            lr_start: 5e-7,
            lr_peak: 1e-4,
            lr_end: 1e-5,
            warmup_steps: 1000,
            weight_decay: 0.05,
            seed: 0,
            history: 8,
            forecast: 4,
            probe_count: (25, 25),
            window_dropout: 0.0,
            weight_alpha: super::flow::DEFAULT_WEIGHT_ALPHA,
            weight_sigma: super::flow::DEFAULT_WEIGHT_SIGMA,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr_start, self.lr_peak, self.lr_end, self.warmup_steps, self.steps)
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 {
            return Err(PaintError::invalid("training needs steps >= 1 and batch >= 1"));
        }
        if self.probe_count.0 == 0 || self.probe_count.0 > self.probe_count.1 {
            return Err(PaintError::invalid(format!("bad probe count range {:?}", self.probe_count)));
        }
        if !(0.0..=1.0).contains(&self.window_dropout) {
            return Err(PaintError::invalid("window_dropout must lie in [0, 1]"));
        }
        self.schedule().map(|_| ())
    }
}

/// Where training writes its artifacts. `resume` continues from the
/// checkpoint file if it exists.
#[derive(Clone, Debug, Default)]
pub struct TrainIo {
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub resume: bool,
    /// Stop abruptly after this many total steps, as a killed run would:
    /// losses logged since the last checkpoint are dropped.
    pub interrupt_after: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainResult<M, T> {
    pub model: M,
    pub optimizer: AdamWState<T>,
    pub losses: Vec<LossRecord>,
}

/// Models the generic loop can optimize and checkpoint.
pub trait Trainable<T: Scalar>: Sized + Sync {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn checkpoint_entries(&self) -> Vec<(String, Tensor<T>)>;
    fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self>;
}

impl<T: Scalar> Trainable<T> for WindowModel<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
    fn checkpoint_entries(&self) -> Vec<(String, Tensor<T>)> {
        WindowModel::checkpoint_entries(self)
    }
    fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        WindowModel::from_entries(entries)
    }
}

impl<T: Scalar> Trainable<T> for ArModel<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
    fn checkpoint_entries(&self) -> Vec<(String, Tensor<T>)> {
        ArModel::checkpoint_entries(self)
    }
    fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        ArModel::from_entries(entries)
    }
}

const STEP_KEY: &str = "train.step";
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

/// Model, optimizer moments and the next step index in one checkpoint.
pub fn save_training_checkpoint<T: Scalar, M: Trainable<T>>(
    path: &Path,
    model: &M,
    opt: &AdamWState<T>,
) -> Result<()> {
    let mut entries = model.checkpoint_entries();
    let names: Vec<String> = model.params().names().to_vec();
    for ((name, m), t) in names.iter().zip(&opt.first_moment).zip(model.params().tensors()) {
        entries.push((format!("{M_PREFIX}{name}"), Tensor::new(t.shape().to_vec(), m.clone())?));
    }
    for ((name, v), t) in names.iter().zip(&opt.second_moment).zip(model.params().tensors()) {
        entries.push((format!("{V_PREFIX}{name}"), Tensor::new(t.shape().to_vec(), v.clone())?));
    }
    entries.push((STEP_KEY.into(), Tensor::scalar(T::lit(opt.step_count as f64))));
    let tmp = path.with_extension("tmp");
    write_checkpoint(&tmp, entries.iter().map(|(k, t)| (k.as_str(), t)))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a model checkpoint, ignoring any optimizer state it carries.
pub fn load_model<T: Scalar, M: Trainable<T>>(path: &Path) -> Result<M> {
    let entries = read_checkpoint::<T>(path)?
        .into_iter()
        .filter(|(k, _)| !(k.starts_with(M_PREFIX) || k.starts_with(V_PREFIX) || k == STEP_KEY))
        .collect();
    M::from_entries(entries)
}

pub fn save_model<T: Scalar, M: Trainable<T>>(path: &Path, model: &M) -> Result<()> {
    let entries = model.checkpoint_entries();
    write_checkpoint(path, entries.iter().map(|(k, t)| (k.as_str(), t)))
}

fn load_training_checkpoint<T: Scalar, M: Trainable<T>>(path: &Path, hyper: AdamW) -> Result<(M, AdamWState<T>)> {
    let mut model_entries = Vec::new();
    let mut ms = std::collections::HashMap::new();
    let mut vs = std::collections::HashMap::new();
    let mut step = None;
    for (k, t) in read_checkpoint::<T>(path)? {
        if let Some(n) = k.strip_prefix(M_PREFIX) {
            ms.insert(n.to_string(), t.into_data());
        } else if let Some(n) = k.strip_prefix(V_PREFIX) {
            vs.insert(n.to_string(), t.into_data());
        } else if k == STEP_KEY {
            step = Some(t.data()[0].as_f64() as u64);
        } else {
            model_entries.push((k, t));
        }
    }
    let model = M::from_entries(model_entries)?;
    let mut opt = AdamWState::new(hyper, model.params().tensors());
    for (i, name) in model.params().names().iter().enumerate() {
        let (m, v) = match (ms.remove(name), vs.remove(name)) {
            (Some(m), Some(v)) => (m, v),
            _ => return Err(PaintError::Format(format!("checkpoint lacks optimizer state for {name}"))),
        };
        if m.len() != opt.first_moment[i].len() || v.len() != opt.second_moment[i].len() {
            return Err(PaintError::Format(format!("optimizer state for {name} has the wrong size")));
        }
        opt.first_moment[i] = m;
        opt.second_moment[i] = v;
    }
    opt.step_count = step.ok_or_else(|| PaintError::Format("checkpoint lacks the training step".into()))?;
    Ok((model, opt))
}

/// RNG for batch element `b` of step `step`: independent of every other
/// step, so a resumed run draws exactly what an uninterrupted one would.
pub fn element_rng(seed: u64, step: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_mul(1 << 20).wrapping_add(b as u64));
    rng
}

fn append_log(path: &Path, records: &[LossRecord], fresh: bool) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(path)?;
    if fresh {
        writeln!(f, "step,lr,loss")?;
    }
    for r in records {
        writeln!(f, "{},{:e},{:e}", r.step, r.lr, r.loss)?;
    }
    Ok(())
}

/// The shared optimisation loop. `element_loss` records one batch element's
/// loss on a tape whose parameter handles are given.
pub fn fit<T, M, F>(mut model: M, cfg: &TrainConfig, io: &TrainIo, element_loss: F) -> Result<TrainResult<M, T>>
where
    T: Scalar,
    M: Trainable<T>,
    F: Fn(&M, &mut Tape<T>, &[Var], &mut ChaCha8Rng) -> Result<Var> + Sync,
{
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let hyper = AdamW { weight_decay: cfg.weight_decay, ..AdamW::default() };
    let mut opt = AdamWState::new(hyper, model.params().tensors());
    let mut fresh_log = true;
    if let (true, Some(ck)) = (io.resume, &io.checkpoint) {
        if ck.exists() {
            let (m, o) = load_training_checkpoint::<T, M>(ck, hyper)?;
            model = m;
            opt = o;
            fresh_log = false;
        }
    }
    let mut losses = Vec::new();
    let mut pending = Vec::new();
    let flush = |pending: &mut Vec<LossRecord>, fresh: &mut bool| -> Result<()> {
        if let Some(log) = &io.loss_log {
            append_log(log, pending, *fresh)?;
            *fresh = false;
        }
        pending.clear();
        Ok(())
    };
    for step in opt.step_count..cfg.steps {
        let lr = schedule.lr(step);
        let results: Vec<Result<(T, Vec<Tensor<T>>)>> = (0..cfg.batch)
            .into_par_iter()
            .map(|b| {
                let mut rng = element_rng(cfg.seed, step, b);
                let mut tape = Tape::new();
                let p = model.params().bind(&mut tape);
                let loss = element_loss(&model, &mut tape, &p, &mut rng)?;
                let value = tape.value(loss)[0];
                let grads = tape.backward(loss)?;
                Ok((value, p.iter().map(|&v| grads.tensor(v)).collect()))
            })
            .collect();
        let mut total = T::zero();
        let mut grads: Vec<Vec<T>> = model.params().tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        for r in results {
            let (value, g) = r.map_err(|e| PaintError::Numerical { step: step as usize, detail: e.to_string() })?;
            total += value;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                for (a, &x) in acc.iter_mut().zip(gi.data()) {
                    *a += x;
                }
            }
        }
        let inv = T::one() / T::from_usize_lossy(cfg.batch);
        let loss = (total * inv).as_f64();
        if !loss.is_finite() {
            return Err(PaintError::Numerical { step: step as usize, detail: format!("loss became {loss}") });
        }
        let grads: Vec<Tensor<T>> = grads
            .into_iter()
            .zip(model.params().tensors())
            .map(|(g, t)| Tensor::new(t.shape().to_vec(), g.into_iter().map(|x| x * inv).collect()))
            .collect::<Result<_>>()?;
        opt.step(model.params_mut().tensors_mut(), &grads, lr)?;
        let rec = LossRecord { step, lr, loss };
        losses.push(rec);
        pending.push(rec);
        let done = step + 1 == cfg.steps;
        if done || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            flush(&mut pending, &mut fresh_log)?;
            if let Some(ck) = &io.checkpoint {
                save_training_checkpoint(ck, &model, &opt)?;
            }
        }
        if io.interrupt_after == Some(step + 1) {
            return Ok(TrainResult { model, optimizer: opt, losses });
        }
    }
    flush(&mut pending, &mut fresh_log)?;
    Ok(TrainResult { model, optimizer: opt, losses })
}

/// Training trajectories of a manifest.
pub fn load_training_set<T: Scalar>(manifest: &DatasetManifest) -> Result<Vec<Trajectory<T>>> {
    manifest.split(Split::Train).map(|e| read_trajectory(&e.path)).collect()
}

fn pick<'a, T: Scalar>(trajs: &'a [Trajectory<T>], span: usize, rng: &mut ChaCha8Rng) -> Result<(&'a Trajectory<T>, usize)> {
    let traj = &trajs[rng.gen_range(0..trajs.len())];
    if traj.len() < span {
        return Err(PaintError::invalid(format!("trajectory of {} frames is shorter than a {span}-frame window", traj.len())));
    }
    Ok((traj, rng.gen_range(0..=traj.len() - span)))
}

fn random_probes(grid: (usize, usize), range: (usize, usize), rng: &mut ChaCha8Rng) -> Result<crate::sensing::ProbeSet> {
    let count = rng.gen_range(range.0..=range.1);
    sample_probes(ProbeKind::Random { count }, grid, None, rng.gen())
}

/// Trains the window model with flow matching on fresh random probes.
pub fn train_paint<T: Scalar>(
    trajs: &[Trajectory<T>],
    model: WindowModel<T>,
    cfg: &TrainConfig,
    io: &TrainIo,
) -> Result<TrainResult<WindowModel<T>, T>> {
    if trajs.is_empty() {
        return Err(PaintError::invalid("no training trajectories"));
    }
    let (h, n) = (cfg.history, cfg.forecast);
    if h == 0 || h + n != model.config.frames {
        return Err(PaintError::invalid(format!(
            "history {h} + forecast {n} does not match the model window of {} frames",
            model.config.frames
        )));
    }
    let grid = model.config.grid;
    let (alpha, sigma) = (c::<T>(cfg.weight_alpha), c::<T>(cfg.weight_sigma));
    fit(model, cfg, io, |m, tape, p, rng| {
        let (traj, start) = pick(trajs, h + n, rng)?;
        let probes = random_probes(grid, cfg.probe_count, rng)?;
        let sample = extract_window(traj, &probes, start + h - 1, h, n)?;
        let mut enc = encode_padded(&sample.measurements, grid, h + n)?;
        if cfg.window_dropout > 0.0 && rng.gen::<f64>() < cfg.window_dropout {
            let keep = rng.gen_range(1..=h);
            enc.clear_frames(h - keep);
        }
        let tau = c::<T>(rng.gen::<f64>());
        let noise = gaussian_noise((h + n) * STATE_CHANNELS * grid.0 * grid.1, rng);
        let weights = SpatialWeightMap::new(&probes, alpha, sigma)?;
        fm_loss_on_tape(m, tape, p, &sample.state_channels(), &enc, tau, &noise, &weights)
    })
}

/// `[1, 2·context, H, W]` stack of normalized states, oldest first.
pub fn context_channels<T: Scalar>(states: &[Field2D<T>]) -> Vec<T> {
    states.iter().flat_map(|f| f.to_channels()).collect()
}

/// Records one AR prediction from normalized context states and the
/// single-frame encoding of the predicted frame.
pub fn ar_forward_on_tape<T: Scalar>(
    model: &ArModel<T>,
    tape: &mut Tape<T>,
    p: &[Var],
    states: &[T],
    enc: &MaskedWindowEncoding<T>,
) -> Result<Var> {
    let cfg = &model.config;
    let (h, w) = cfg.grid;
    if enc.frames != 1 {
        return Err(PaintError::shape("ar_step", format!("encoding has {} frames, expected 1", enc.frames)));
    }
    let s = tape.constant(&[1, STATE_CHANNELS * cfg.context, h, w], states.to_vec())?;
    let e = tape.constant(&[1, 3, h, w], enc.to_channels())?;
    model.forward(tape, p, s, e)
}

/// One autoregressive prediction `x̂_{t+1}` from the last `context` states.
pub fn ar_step<T: Scalar>(model: &ArModel<T>, prev_states: &[Field2D<T>], enc: &MaskedWindowEncoding<T>) -> Result<Field2D<T>> {
    let cfg = &model.config;
    if prev_states.len() != cfg.context {
        return Err(PaintError::shape(
            "ar_step",
            format!("{} previous states for context {}", prev_states.len(), cfg.context),
        ));
    }
    let mut tape = Tape::new();
    let p = super::model::bind_frozen(&model.params, &mut tape)?;
    let out = ar_forward_on_tape(model, &mut tape, &p, &context_channels(prev_states), enc)?;
    Field2D::from_channels(cfg.grid.0, cfg.grid.1, tape.value(out))
}

/// Teacher-forced next-frame training of the AR baseline.
pub fn train_ar<T: Scalar>(
    trajs: &[Trajectory<T>],
    model: ArModel<T>,
    cfg: &TrainConfig,
    io: &TrainIo,
) -> Result<TrainResult<ArModel<T>, T>> {
    if trajs.is_empty() {
        return Err(PaintError::invalid("no training trajectories"));
    }
    let ctx = model.config.context;
    let grid = model.config.grid;
    let weights = SpatialWeightMap::<T>::uniform(grid);
    fit(model, cfg, io, |m, tape, p, rng| {
        let (traj, start) = pick(trajs, ctx + 1, rng)?;
        let inv = T::one() / traj.normalization;
        let frames: Vec<Field2D<T>> = traj.frames[start..start + ctx + 1].iter().map(|f| f.scaled(inv)).collect();
        let probes = random_probes(grid, cfg.probe_count, rng)?;
        let mw = emit_frames(&frames[ctx..], &probes, start + ctx, T::zero(), 0)?;
        let enc = encode(&mw, grid)?;
        let pred = ar_forward_on_tape(m, tape, p, &context_channels(&frames[..ctx]), &enc)?;
        weighted_mse(tape, pred, &frames[ctx].to_channels(), &weights.weights, &[grid.0, grid.1])
    })
}
