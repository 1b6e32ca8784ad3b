//! Trajectory files, dataset manifests with parameter splits, and training
//! window extraction.
//!
//! Trajectory file layout (all little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `PTRJ` |
//! | 4     | u32 version |
//! | 4     | u32 system id |
//! | 4, 4  | u32 H, u32 W |
//! | 8     | u64 frame count |
//! | 8     | f64 stored dt |
//! | 48    | 6 × f64 system parameters |
//! | 8     | u64 seed |
//! | 8     | f64 normalization |
//!
//! followed by the frames as f64, frame-major, `u` then `v`, each row-major.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynsys::{Field2D, System, SystemParams, Trajectory};
use crate::error::{PaintError, Result};
use crate::scalar::Scalar;
use crate::sensing::{emit_frames, MeasurementWindow, ProbeSet};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"PTRJ";
pub const TRAJECTORY_VERSION: u32 = 1;
pub const TRAJECTORY_HEADER_BYTES: usize = 100;

fn param_slots(system: &System) -> [f64; 6] {
    match *system {
        System::Logistic { r } => [r, 0.0, 0.0, 0.0, 0.0, 0.0],
        System::Lorenz { sigma, rho, beta, dt } => [sigma, rho, beta, dt, 0.0, 0.0],
        System::Kolmogorov { viscosity, forcing_wavenumber, amplitude, dt_solver, .. } => {
            [viscosity, forcing_wavenumber as f64, amplitude, dt_solver, 0.0, 0.0]
        }
    }
}

fn system_from_slots(id: u32, s: [f64; 6], h: usize, w: usize) -> Result<System> {
    Ok(match id {
        0 => System::Logistic { r: s[0] },
        1 => System::Lorenz { sigma: s[0], rho: s[1], beta: s[2], dt: s[3] },
        2 => {
            if !(s[1] >= 0.0 && s[1].fract() == 0.0) {
                return Err(PaintError::Format(format!("forcing wavenumber slot holds {}", s[1])));
            }
            System::Kolmogorov {
                viscosity: s[0],
                forcing_wavenumber: s[1] as usize,
                amplitude: s[2],
                dt_solver: s[3],
                h,
                w,
            }
        }
        other => return Err(PaintError::Format(format!("unknown system id {other}"))),
    })
}

pub fn encode_trajectory<T: Scalar>(traj: &Trajectory<T>) -> Result<Vec<u8>> {
    if traj.is_empty() {
        return Err(PaintError::invalid("cannot write an empty trajectory"));
    }
    let (h, w) = (traj.height(), traj.width());
    let mut out = Vec::with_capacity(TRAJECTORY_HEADER_BYTES + traj.len() * 2 * h * w * 8);
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    out.extend_from_slice(&traj.params.system.id().to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(traj.len() as u64).to_le_bytes());
    out.extend_from_slice(&traj.dt.as_f64().to_le_bytes());
    for p in param_slots(&traj.params.system) {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&traj.params.seed.to_le_bytes());
    out.extend_from_slice(&traj.normalization.as_f64().to_le_bytes());
    debug_assert_eq!(out.len(), TRAJECTORY_HEADER_BYTES);
    for f in &traj.frames {
        if f.height() != h || f.width() != w {
            return Err(PaintError::shape("write_trajectory", "frames differ in grid size"));
        }
        for x in f.u().iter().chain(f.v()) {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        a
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

pub fn decode_trajectory<T: Scalar>(bytes: &[u8]) -> Result<Trajectory<T>> {
    if bytes.len() < TRAJECTORY_HEADER_BYTES {
        return Err(PaintError::Format(format!(
            "trajectory truncated: header needs {TRAJECTORY_HEADER_BYTES} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != TRAJECTORY_MAGIC {
        return Err(PaintError::Format(format!("bad trajectory magic {:?}", &bytes[..4])));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32();
    if version != TRAJECTORY_VERSION {
        return Err(PaintError::Format(format!("unsupported trajectory version {version}")));
    }
    let id = r.u32();
    let h = r.u32() as usize;
    let w = r.u32() as usize;
    let n = r.u64() as usize;
    let dt = r.f64();
    let mut slots = [0.0; 6];
    for s in &mut slots {
        *s = r.f64();
    }
    let seed = r.u64();
    let normalization = r.f64();
    let expected = n
        .checked_mul(2 * h * w * 8)
        .and_then(|p| p.checked_add(TRAJECTORY_HEADER_BYTES))
        .ok_or_else(|| PaintError::Format("trajectory header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(PaintError::Format(format!(
            "trajectory length mismatch: expected {expected} bytes for {n} frames of {h}x{w}, file has {}",
            bytes.len()
        )));
    }
    if n == 0 {
        return Err(PaintError::Format("trajectory has no frames".into()));
    }
    let system = system_from_slots(id, slots, h, w)?;
    let hw = h * w;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let u = (0..hw).map(|_| T::lit(r.f64())).collect();
        let v = (0..hw).map(|_| T::lit(r.f64())).collect();
        frames.push(Field2D::new(h, w, u, v)?);
    }
    Ok(Trajectory {
        frames,
        dt: T::lit(dt),
        params: SystemParams { system, seed },
        normalization: T::lit(normalization),
    })
}

pub fn write_trajectory<T: Scalar>(path: &Path, traj: &Trajectory<T>) -> Result<()> {
    std::fs::write(path, encode_trajectory(traj)?)?;
    Ok(())
}

pub fn read_trajectory<T: Scalar>(path: &Path) -> Result<Trajectory<T>> {
    decode_trajectory(&std::fs::read(path)?).map_err(|e| match e {
        PaintError::Format(m) => PaintError::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = PaintError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(PaintError::Format(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub param: f64,
    pub split: Split,
}

/// Trajectory files with their conditioning parameter and split.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// File name used for the `i`-th trajectory of a dataset.
pub fn trajectory_file_name(i: usize) -> String {
    format!("traj_{i:03}.ptrj")
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Checks that every held-out parameter lies strictly inside the
    /// training range.
    pub fn validate(&self) -> Result<()> {
        let train: Vec<f64> = self.split(Split::Train).map(|e| e.param).collect();
        if train.is_empty() {
            return Err(PaintError::invalid("manifest has no training trajectories"));
        }
        let lo = train.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for e in self.entries.iter().filter(|e| e.split != Split::Train) {
            if !(e.param > lo && e.param < hi) {
                return Err(PaintError::invalid(format!(
                    "{} parameter {} outside the training range ({lo}, {hi})",
                    e.split, e.param
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{},{},{}\n", e.path.display(), e.param, e.split))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.rsplitn(3, ',');
            let (split, param, path) = match (parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(p), Some(f)) => (s, p, f),
                _ => return Err(PaintError::Format(format!("bad manifest line '{line}'"))),
            };
            let param = param
                .trim()
                .parse()
                .map_err(|_| PaintError::Format(format!("bad parameter in manifest line '{line}'")))?;
            entries.push(ManifestEntry { path: PathBuf::from(path.trim()), param, split: split.trim().parse()? });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads a manifest, resolving relative paths against its directory and
    /// checking that every file exists.
    pub fn read(path: &Path) -> Result<Self> {
        let mut m = Self::from_text(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = dir.join(&e.path);
            }
            if !e.path.exists() {
                return Err(PaintError::invalid(format!("manifest entry {} does not exist", e.path.display())));
            }
        }
        m.validate()?;
        Ok(m)
    }
}

/// Seeded parameter split: the extreme parameters always train, one interior
/// parameter validates and (up to) two interior parameters test. With only
/// four distinct values a single test parameter is held out.
pub fn make_splits(param_values: &[f64], seed: u64) -> Result<DatasetManifest> {
    let mut distinct: Vec<f64> = param_values.to_vec();
    if distinct.iter().any(|p| !p.is_finite()) {
        return Err(PaintError::invalid("split parameters must be finite"));
    }
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(PaintError::invalid(format!(
            "need at least 4 distinct parameters to split, got {}",
            distinct.len()
        )));
    }
    let mut interior = distinct[1..distinct.len() - 1].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    interior.shuffle(&mut rng);
    let n_test = (interior.len() - 1).min(2);
    let val = interior[0];
    let test = &interior[1..1 + n_test];
    let entries = param_values
        .iter()
        .enumerate()
        .map(|(i, &p)| ManifestEntry {
            path: PathBuf::from(trajectory_file_name(i)),
            param: p,
            split: if p == val {
                Split::Val
            } else if test.contains(&p) {
                Split::Test
            } else {
                Split::Train
            },
        })
        .collect();
    Ok(DatasetManifest { entries })
}

/// Training/evaluation window: normalized states over `[t − h + 1, t + n]`
/// and the noiseless measurements of the first `h` of them.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample<T> {
    pub states: Vec<Field2D<T>>,
    pub measurements: MeasurementWindow<T>,
    pub param: f64,
}

impl<T: Scalar> WindowSample<T> {
    pub fn history(&self) -> usize {
        self.measurements.window_length
    }

    pub fn forecast(&self) -> usize {
        self.states.len() - self.history()
    }

    /// States as a `[frames, 2, H, W]` channel stack.
    pub fn state_channels(&self) -> Vec<T> {
        self.states.iter().flat_map(|f| f.to_channels()).collect()
    }
}

/// Extracts the window ending its history at frame `t`: `h` history frames
/// (including `t`) and `n` forecast frames.
pub fn extract_window<T: Scalar>(
    traj: &Trajectory<T>,
    probes: &ProbeSet,
    t: usize,
    h: usize,
    n: usize,
) -> Result<WindowSample<T>> {
    if h == 0 || t + 1 < h || t + n >= traj.len() {
        return Err(PaintError::invalid(format!(
            "window h={h}, n={n} at t={t} outside trajectory of {} frames",
            traj.len()
        )));
    }
    let start = t + 1 - h;
    let norm = traj.normalization;
    let states: Vec<Field2D<T>> = traj.frames[start..=t + n]
        .iter()
        .map(|f| f.scaled(T::one() / norm))
        .collect();
    let measurements = emit_frames(&states[..h], probes, start, T::zero(), 0)?;
    Ok(WindowSample {
        states,
        measurements,
        param: traj.params.system.conditioning_value(),
    })
}
