use std::fs;
use std::path::{Path, PathBuf};

use paint_core::dataio::{make_splits, read_trajectory, write_trajectory, DatasetManifest, Split};
use paint_core::dynsys::{logistic_step, simulate_flow, System, SystemParams, Trajectory};
use paint_core::evalkit::{
    divergence_summary, drift_report, flow_stats, logistic_counterexample, logistic_jacobians, plot_report,
    product_norm_series, scalar_series, write_jacobian_series, write_metrics, write_mse_over_time, write_spectrum,
    ArChain, JacobianSeries, MetricsRow, JACOBIAN_CSV, METRICS_CSV, MSE_OVER_TIME_CSV, SPECTRUM_CSV,
};
use paint_core::generative::{
    load_model, load_training_set, train_ar, train_paint, ArModel, ArModelConfig, LossRecord, TrainConfig, TrainIo,
    WindowModel, WindowModelConfig,
};
use paint_core::scalar::{c, Scalar};
use paint_core::sensing::{emit_frames, encode_padded, sample_probes, ProbeKind, ProbeSet};
use paint_core::twin::{ar_track, sub_window, track, write_estimate, TwinConfig};
use paint_core::PaintError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::{CliError, ModelKind};

pub const MANIFEST: &str = "manifest.csv";
const DIVERGENCE_CSV: &str = "divergence.csv";
const DIVERGENCE_SUMMARY_CSV: &str = "divergence_summary.csv";

type Res<T = ()> = Result<T, CliError>;

fn create_dir(dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(e.into()))
}

fn grid(cfg: &Config) -> (usize, usize) {
    let g = cfg.get("system", "grid");
    (g, g)
}

fn flow_system(cfg: &Config, amplitude: f64) -> System {
    let (h, w) = grid(cfg);
    System::Kolmogorov {
        viscosity: cfg.get("system", "viscosity"),
        forcing_wavenumber: cfg.get("system", "forcing_wavenumber"),
        amplitude,
        dt_solver: cfg.get("system", "dt_solver"),
        h,
        w,
    }
}

fn data_dir(cfg: &Config) -> PathBuf {
    PathBuf::from(cfg.str("dataset", "dir"))
}

fn run_dir(cfg: &Config) -> PathBuf {
    PathBuf::from(cfg.str("training", "run_dir"))
}

fn checkpoint_path(cfg: &Config, kind: ModelKind) -> PathBuf {
    run_dir(cfg).join(format!("{}.ckpt", kind.name()))
}

fn read_manifest(cfg: &Config) -> Res<DatasetManifest> {
    let path = data_dir(cfg).join(MANIFEST);
    if !path.exists() {
        return Err(CliError::Config(format!("no dataset at {} (run `paint simulate` first)", path.display())));
    }
    Ok(DatasetManifest::read(&path)?)
}

fn load<T: Scalar, M: paint_core::generative::Trainable<T>>(cfg: &Config, kind: ModelKind) -> Res<M> {
    let path = checkpoint_path(cfg, kind);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "no {} checkpoint at {} (run `paint train --model {}` first)",
            kind.name(),
            path.display(),
            kind.name()
        )));
    }
    Ok(load_model(&path)?)
}

pub fn simulate<T: Scalar>(cfg: &Config) -> Res {
    let dir = data_dir(cfg);
    create_dir(&dir)?;
    let amplitudes: Vec<f64> = cfg.list("system", "amplitudes");
    let manifest = make_splits(&amplitudes, cfg.get("dataset", "split_seed"))?;
    let seed: u64 = cfg.get("system", "seed");
    let (frames, burn_in, stride) = (cfg.get("system", "frames"), cfg.get("system", "burn_in"), cfg.get("system", "stride"));
    manifest.entries.par_iter().enumerate().try_for_each(|(i, e)| -> Res {
        let params = SystemParams { system: flow_system(cfg, e.param), seed: seed.wrapping_mul(1000).wrapping_add(i as u64) };
        let traj = simulate_flow::<T>(params, frames, burn_in, stride)?;
        write_trajectory(&dir.join(&e.path), &traj)?;
        println!("{} amplitude {} ({}): {frames} frames", e.path.display(), e.param, e.split);
        Ok(())
    })?;
    manifest.write(&dir.join(MANIFEST))?;
    println!("wrote {}", dir.join(MANIFEST).display());
    Ok(())
}

fn window_config(cfg: &Config) -> WindowModelConfig {
    WindowModelConfig {
        grid: grid(cfg),
        frames: cfg.get::<usize>("model", "history") + cfg.get::<usize>("model", "forecast"),
        patch: cfg.get("model", "patch"),
        dim: cfg.get("model", "dim"),
        layers: cfg.get("model", "layers"),
        heads: cfg.get("model", "heads"),
        mlp_ratio: cfg.get("model", "mlp_ratio"),
    }
}

fn train_config(cfg: &Config, kind: ModelKind) -> TrainConfig {
    TrainConfig {
        steps: cfg.get("training", "steps"),
        batch: cfg.get("training", "batch"),
        lr_start: cfg.get("training", "lr_start"),
        lr_peak: cfg.get("training", "lr_peak"),
        lr_end: cfg.get("training", "lr_end"),
        warmup_steps: cfg.get("training", "warmup"),
        weight_decay: cfg.get("training", "weight_decay"),
        seed: cfg.get("training", "seed"),
        history: match kind {
            ModelKind::Paint => cfg.get("model", "history"),
            ModelKind::Ar => cfg.get("model", "ar_context"),
        },
        forecast: cfg.get("model", "forecast"),
        probe_count: (cfg.get("training", "probes_min"), cfg.get("training", "probes_max")),
        window_dropout: cfg.get("training", "window_dropout"),
        weight_alpha: cfg.get("training", "weight_alpha"),
        weight_sigma: cfg.get("training", "weight_sigma"),
        checkpoint_every: cfg.get("training", "checkpoint_every"),
    }
}

fn summarize(losses: &[LossRecord]) {
    let tail = &losses[losses.len().saturating_sub(50)..];
    if let Some(last) = tail.last() {
        let mean = tail.iter().map(|l| l.loss).sum::<f64>() / tail.len() as f64;
        println!("finished at step {}: mean loss over the last {} steps {mean:.5}", last.step + 1, tail.len());
    } else {
        println!("nothing to do: the checkpoint already covers every step");
    }
}

pub fn train<T: Scalar>(cfg: &Config, kind: ModelKind, resume: bool, stop_after: Option<u64>) -> Res {
    let manifest = read_manifest(cfg)?;
    let trajs = load_training_set::<T>(&manifest)?;
    let wcfg = window_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.get("model", "init_seed"));
    let paint = WindowModel::<T>::new(wcfg, &mut rng)?;
    let dir = run_dir(cfg);
    create_dir(&dir)?;
    let io = TrainIo {
        checkpoint: Some(checkpoint_path(cfg, kind)),
        loss_log: Some(dir.join(format!("{}_loss.csv", kind.name()))),
        resume,
        interrupt_after: stop_after,
    };
    let tc = train_config(cfg, kind);
    match kind {
        ModelKind::Paint => {
            println!("paint parameters: {}", paint.param_count());
            summarize(&train_paint(&trajs, paint, &tc, &io)?.losses);
        }
        ModelKind::Ar => {
            let acfg = ArModelConfig::matched_to(&wcfg, paint.param_count(), cfg.get("model", "ar_context"));
            let ar = ArModel::<T>::new(acfg, &mut rng)?;
            println!("ar parameters: {} (window model: {})", ar.param_count(), paint.param_count());
            summarize(&train_ar(&trajs, ar, &tc, &io)?.losses);
        }
    }
    println!("checkpoint: {}", checkpoint_path(cfg, kind).display());
    Ok(())
}

fn probe_set(cfg: &Config, constellation: &str) -> Res<ProbeSet> {
    let g = grid(cfg);
    let inlet = cfg.get::<bool>("twin", "inlet").then(|| cfg.get("system", "forcing_wavenumber"));
    let kind = match constellation {
        "grid" => ProbeKind::Grid { rows: cfg.get("twin", "grid_rows"), cols: cfg.get("twin", "grid_cols") },
        "vertical" => ProbeKind::Vertical { count: cfg.get("twin", "vertical_count") },
        "file" => {
            let path = cfg.str("twin", "probe_file");
            if path.is_empty() {
                return Err(CliError::Config("constellation 'file' needs twin.probe_file".into()));
            }
            let probes = ProbeSet::read(Path::new(path))?;
            if probes.grid() != g {
                return Err(CliError::Config(format!("probe file grid {:?} differs from the system grid {g:?}", probes.grid())));
            }
            return Ok(probes);
        }
        other => return Err(CliError::Config(format!("unknown constellation '{other}' (grid | vertical | file)"))),
    };
    Ok(sample_probes(kind, g, inlet, cfg.get("twin", "seed"))?)
}

fn twin_config(cfg: &Config, normalization: f64) -> Res<TwinConfig> {
    Ok(TwinConfig {
        history: cfg.get("twin", "history"),
        forecast: cfg.get("model", "forecast"),
        mode: cfg.str("twin", "mode").parse()?,
        n_seeds: cfg.get("twin", "seeds"),
        steps: cfg.get("twin", "steps"),
        seed: cfg.get("twin", "seed"),
        normalization,
    })
}

/// Evaluated frames `[t0, t0 + len)` of a trajectory.
fn span<T: Scalar>(cfg: &Config, traj: &Trajectory<T>) -> Res<(usize, usize)> {
    let t0: usize = cfg.get("eval", "t0");
    if t0 >= traj.len() {
        return Err(CliError::Config(format!("eval.t0 = {t0} lies beyond a {}-frame trajectory", traj.len())));
    }
    Ok((t0, cfg.get::<usize>("eval", "horizon").min(traj.len() - t0)))
}

fn eval_split(cfg: &Config) -> Res<Split> {
    Ok(cfg.str("eval", "split").parse()?)
}

enum Loaded<T> {
    Paint(WindowModel<T>),
    Ar(ArModel<T>),
}

impl<T: Scalar> Loaded<T> {
    fn load(cfg: &Config, kind: ModelKind) -> Res<Self> {
        Ok(match kind {
            ModelKind::Paint => Loaded::Paint(load(cfg, kind)?),
            ModelKind::Ar => Loaded::Ar(load(cfg, kind)?),
        })
    }

    fn estimate(&self, cfg: &Config, traj: &Trajectory<T>, probes: &ProbeSet) -> Res<Estimate<T>> {
        let (t0, len) = span(cfg, traj)?;
        let (sigma, seed) = (cfg.get("twin", "noise_sigma"), cfg.get("twin", "noise_seed"));
        Ok(match self {
            Loaded::Paint(m) => {
                let tc = twin_config(cfg, traj.normalization.as_f64())?;
                Estimate::Ensemble(track(m, traj, probes, &tc, t0, len, sigma, seed)?)
            }
            Loaded::Ar(m) => Estimate::Rollout(ar_track(m, traj, probes, t0, len, sigma, seed)?),
        })
    }
}

enum Estimate<T> {
    Ensemble(paint_core::twin::EnsembleEstimate<T>),
    Rollout(Vec<paint_core::dynsys::Field2D<T>>),
}

impl<T> Estimate<T> {
    fn frames(&self) -> &[paint_core::dynsys::Field2D<T>] {
        match self {
            Estimate::Ensemble(e) => &e.mean,
            Estimate::Rollout(f) => f,
        }
    }
}

pub fn reconstruct<T: Scalar>(cfg: &Config, kind: ModelKind) -> Res {
    let manifest = read_manifest(cfg)?;
    let model = Loaded::<T>::load(cfg, kind)?;
    let constellation = cfg.str("twin", "constellation");
    let probes = probe_set(cfg, constellation)?;
    let out = run_dir(cfg).join("reconstruct");
    create_dir(&out)?;
    probes.write(&out.join(format!("{constellation}.probes")))?;
    for entry in manifest.split(eval_split(cfg)?) {
        let traj = read_trajectory::<T>(&entry.path)?;
        let stem = entry.path.file_stem().and_then(|s| s.to_str()).unwrap_or("traj");
        let path = out.join(format!("{stem}_{}_{constellation}.ptrj", kind.name()));
        let (t0, len) = span(cfg, &traj)?;
        match model.estimate(cfg, &traj, &probes)? {
            Estimate::Ensemble(est) => {
                let side = write_estimate(&path, &est, traj.dt, traj.params, traj.normalization)?;
                println!("{} (+ {}): frames {t0}..{}", path.display(), side.display(), t0 + len);
            }
            Estimate::Rollout(frames) => {
                write_trajectory(&path, &Trajectory { frames, ..traj.clone() })?;
                println!("{}: frames {t0}..{}", path.display(), t0 + len);
            }
        }
    }
    Ok(())
}

fn model_kinds(cfg: &Config) -> Res<Vec<ModelKind>> {
    cfg.list::<String>("eval", "models")
        .iter()
        .map(|m| match m.as_str() {
            "paint" => Ok(ModelKind::Paint),
            "ar" => Ok(ModelKind::Ar),
            other => Err(CliError::Config(format!("unknown model '{other}' in eval.models (paint | ar)"))),
        })
        .collect()
}

fn spectrum<T: Scalar>(frames: &[paint_core::dynsys::Field2D<T>]) -> Res<Vec<f64>> {
    Ok(flow_stats(frames)?.spectrum.iter().map(|x| x.as_f64()).collect())
}

pub fn evaluate<T: Scalar>(cfg: &Config) -> Res {
    let manifest = read_manifest(cfg)?;
    let models: Vec<(ModelKind, Loaded<T>)> =
        model_kinds(cfg)?.into_iter().map(|k| Ok((k, Loaded::load(cfg, k)?))).collect::<Res<_>>()?;
    let out = PathBuf::from(cfg.str("eval", "out_dir"));
    create_dir(&out)?;
    let split = eval_split(cfg)?;
    let (mut rows, mut mse, mut spectra) = (Vec::new(), Vec::new(), Vec::new());
    println!("{:<6} {:>6} {:<10} {:>10} {:>10} {:>10} {:>10}", "model", "param", "probes", "mse", "mae_mean", "mae_var", "slope");
    for constellation in cfg.list::<String>("eval", "constellations") {
        let probes = probe_set(cfg, &constellation)?;
        for entry in manifest.split(split) {
            let traj = read_trajectory::<T>(&entry.path)?;
            let (t0, len) = span(cfg, &traj)?;
            let truth = &traj.frames[t0..t0 + len];
            let true_spectrum = spectrum(truth)?;
            for (kind, model) in &models {
                let est = model.estimate(cfg, &traj, &probes)?;
                let report = drift_report(truth, est.frames())?;
                let name = format!("{}/{constellation}/{}", kind.name(), entry.param);
                println!(
                    "{:<6} {:>6} {:<10} {:>10.4e} {:>10.4e} {:>10.4e} {:>10.3e}",
                    kind.name(),
                    entry.param,
                    constellation,
                    report.mse,
                    report.mae_mean,
                    report.mae_variance,
                    report.slope
                );
                mse.push((name.clone(), report.mse_t.clone()));
                spectra.push((name, true_spectrum.clone(), spectrum(est.frames())?));
                rows.push(MetricsRow { model: kind.name().into(), param: entry.param, constellation: constellation.clone(), report });
            }
        }
    }
    write_metrics(&out.join(METRICS_CSV), &rows)?;
    write_mse_over_time(&out.join(MSE_OVER_TIME_CSV), &mse)?;
    write_spectrum(&out.join(SPECTRUM_CSV), &spectra)?;
    for name in [MSE_OVER_TIME_CSV, SPECTRUM_CSV] {
        plot_report(&out.join(name))?;
    }
    println!("reports in {}", out.display());
    Ok(())
}

fn write_divergence(path: &Path, curves: &[paint_core::evalkit::DivergenceCurve]) -> Res {
    let mut text = String::from("eps,t,deviation\n");
    for cv in curves {
        for (t, d) in cv.deviation.iter().enumerate() {
            text.push_str(&format!("{},{t},{d}\n", cv.eps));
        }
    }
    fs::write(path, text).map_err(|e| CliError::Core(e.into()))
}

pub fn diagnose_logistic(cfg: &Config) -> Res<Vec<(String, JacobianSeries)>> {
    let out = PathBuf::from(cfg.str("eval", "out_dir"));
    create_dir(&out)?;
    let r: f64 = cfg.get("eval", "logistic_r");
    let starts: usize = cfg.get("eval", "logistic_starts");
    let mut x0 = 0.3;
    for _ in 0..1000 {
        x0 = logistic_step(x0, r)?;
    }
    let mut summary = String::from("eps,mean_time,predicted_time,lyapunov,starts\n");
    let mut curves = Vec::new();
    println!("{:>8} {:>12} {:>12}", "eps", "mean t_div", "ln(0.1/eps)/λ");
    for eps in cfg.list::<f64>("eval", "logistic_eps") {
        let s = divergence_summary(eps, r, starts, cfg.get("twin", "seed"))?;
        println!("{eps:>8.0e} {:>12.2} {:>12.2}", s.mean_time, s.predicted_time);
        summary.push_str(&format!("{eps},{},{},{},{}\n", s.mean_time, s.predicted_time, s.lyapunov, s.starts));
        curves.push(logistic_counterexample(eps, r, x0, (2.0 * s.predicted_time).ceil() as usize + 20)?);
    }
    write_divergence(&out.join(DIVERGENCE_CSV), &curves)?;
    fs::write(out.join(DIVERGENCE_SUMMARY_CSV), summary).map_err(|e| CliError::Core(e.into()))?;
    let derivs = logistic_jacobians(x0, r, cfg.get("eval", "jacobian_steps"))?;
    Ok(vec![(format!("logistic/r={r}"), scalar_series(&derivs))])
}

pub fn diagnose_jacobian<T: Scalar>(cfg: &Config) -> Res<Vec<(String, JacobianSeries)>> {
    let manifest = read_manifest(cfg)?;
    let model: ArModel<T> = load(cfg, ModelKind::Ar)?;
    let entry = manifest
        .split(eval_split(cfg)?)
        .next()
        .ok_or_else(|| CliError::Config("the evaluation split is empty".into()))?;
    let traj = read_trajectory::<T>(&entry.path)?;
    let constellation = cfg.str("twin", "constellation");
    let probes = probe_set(cfg, constellation)?;
    let ctx = model.config.context;
    let steps: usize = cfg.get("eval", "jacobian_steps");
    let t0 = cfg.get::<usize>("eval", "t0").max(ctx);
    if t0 + steps > traj.len() {
        return Err(CliError::Config(format!("{steps} Jacobian steps from t0 = {t0} overrun the trajectory")));
    }
    let inv = T::one() / traj.normalization;
    let frames: Vec<_> = traj.frames[t0 - ctx..t0 + steps].iter().map(|f| f.scaled(inv)).collect();
    let mw = emit_frames(&frames[ctx..], &probes, t0, c(0.0), 0)?;
    let encodings = (0..steps)
        .map(|k| encode_padded(&sub_window(&mw, k, 1)?, model.config.grid, 1))
        .collect::<Result<Vec<_>, PaintError>>()?;
    let chain = ArChain::new(&model, &frames[..ctx], encodings)?;
    let series = product_norm_series(&chain, cfg.get("eval", "jacobian_iters"), cfg.get("twin", "seed"))?;
    if let Some(last) = series.log_product_norms.last() {
        println!("AR: ln ||J_{steps} … J_1|| = {last:.3} ({:.4} per step)", last / steps as f64);
    }
    Ok(vec![(format!("ar/{constellation}/{}", entry.param), series)])
}

pub fn write_jacobian(cfg: &Config, series: &[(String, JacobianSeries)]) -> Res {
    let out = PathBuf::from(cfg.str("eval", "out_dir"));
    create_dir(&out)?;
    let path = out.join(JACOBIAN_CSV);
    write_jacobian_series(&path, series)?;
    plot_report(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn plot(cfg: &Config, inputs: &[PathBuf]) -> Res {
    let default = [PathBuf::from(cfg.str("eval", "out_dir"))];
    let inputs = if inputs.is_empty() { &default[..] } else { inputs };
    let known = [MSE_OVER_TIME_CSV, SPECTRUM_CSV, JACOBIAN_CSV];
    let mut written = 0;
    for input in inputs {
        let files: Vec<PathBuf> = if input.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| CliError::Core(e.into()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| known.contains(&n)))
                .collect();
            v.sort();
            v
        } else {
            vec![input.clone()]
        };
        for f in files {
            for svg in plot_report(&f)? {
                println!("{}", svg.display());
                written += 1;
            }
        }
    }
    if written == 0 {
        return Err(CliError::Config("no report CSVs to plot".into()));
    }
    Ok(())
}
