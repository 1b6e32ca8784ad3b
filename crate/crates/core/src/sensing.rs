//! Probe constellations, the measurement (emission) model and the mask/value
//! grid encoding consumed by the generative models.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynsys::{forcing_peak_row, Field2D, Trajectory};
use crate::error::{PaintError, Result};
use crate::scalar::{standard_normal, Scalar};

/// Sensor locations on an `h × w` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeSet {
    positions: Vec<(usize, usize)>,
    grid: (usize, usize),
    /// Whether the last position is the fixed probe at the forcing peak.
    pub includes_inlet: bool,
}

/// Constellation layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    /// `count` distinct uniformly drawn pixels.
    Random { count: usize },
    /// Evenly spaced `rows × cols` lattice.
    Grid { rows: usize, cols: usize },
    /// `count` evenly spaced probes down the column at 3/4 of the width.
    Vertical { count: usize },
}

impl ProbeSet {
    pub fn new(positions: Vec<(usize, usize)>, grid: (usize, usize), includes_inlet: bool) -> Result<Self> {
        if positions.is_empty() {
            return Err(PaintError::invalid("probe set is empty"));
        }
        let mut seen = HashSet::new();
        for &(r, c) in &positions {
            if r >= grid.0 || c >= grid.1 {
                return Err(PaintError::invalid(format!(
                    "probe ({r}, {c}) outside {}x{} grid",
                    grid.0, grid.1
                )));
            }
            if !seen.insert((r, c)) {
                return Err(PaintError::invalid(format!("duplicate probe ({r}, {c})")));
            }
        }
        Ok(ProbeSet { positions, grid, includes_inlet })
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    /// Flat pixel indices `row · w + col`.
    pub fn pixel_indices(&self) -> Vec<usize> {
        self.positions.iter().map(|&(r, c)| r * self.grid.1 + c).collect()
    }

    /// Plain-text form: `# grid HxW` header, then one `row,col` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("# grid {}x{}\n", self.grid.0, self.grid.1);
        for (i, &(r, c)) in self.positions.iter().enumerate() {
            if self.includes_inlet && i + 1 == self.positions.len() {
                s.push_str("# inlet\n");
            }
            let _ = writeln!(s, "{r},{c}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| PaintError::Format("empty probe file".into()))?;
        let dims = header
            .strip_prefix("# grid ")
            .ok_or_else(|| PaintError::Format(format!("probe file header must be '# grid HxW', got '{header}'")))?;
        let (h, w) = dims
            .split_once('x')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
            .ok_or_else(|| PaintError::Format(format!("bad grid dimensions '{dims}'")))?;
        let mut positions = Vec::new();
        let mut inlet_next = false;
        let mut includes_inlet = false;
        for line in lines {
            if line == "# inlet" {
                inlet_next = true;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let (r, c) = line
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| PaintError::Format(format!("bad probe line '{line}'")))?;
            positions.push((r, c));
            includes_inlet = inlet_next;
        }
        ProbeSet::new(positions, (h, w), includes_inlet)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Grid location of the inlet-analog probe: the forcing-peak row, column 0.
pub fn inlet_position(h: usize, forcing_wavenumber: usize) -> (usize, usize) {
    (forcing_peak_row(h, forcing_wavenumber), 0)
}

/// Evenly spaced indices `floor((i + ½) n / count)`.
fn spread(count: usize, n: usize) -> impl Iterator<Item = usize> {
    (0..count).map(move |i| ((2 * i + 1) * n) / (2 * count))
}

/// Builds a probe constellation. `inlet` adds the fixed forcing-peak probe
/// for the given forcing wavenumber on top of the layout.
pub fn sample_probes(kind: ProbeKind, grid: (usize, usize), inlet: Option<usize>, seed: u64) -> Result<ProbeSet> {
    let (h, w) = grid;
    let inlet_pos = inlet.map(|kf| inlet_position(h, kf));
    let mut positions: Vec<(usize, usize)> = match kind {
        ProbeKind::Random { count } => {
            let avail = h * w - usize::from(inlet_pos.is_some());
            if count == 0 || count > avail {
                return Err(PaintError::invalid(format!(
                    "cannot place {count} random probes on a {h}x{w} grid"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let excluded = inlet_pos.map(|(r, c)| r * w + c);
            let pool = h * w - usize::from(excluded.is_some());
            rand::seq::index::sample(&mut rng, pool, count)
                .into_iter()
                .map(|k| match excluded {
                    Some(e) if k >= e => k + 1,
                    _ => k,
                })
                .map(|k| (k / w, k % w))
                .collect()
        }
        ProbeKind::Grid { rows, cols } => {
            if rows == 0 || cols == 0 || rows > h || cols > w {
                return Err(PaintError::invalid(format!(
                    "{rows}x{cols} probe lattice does not fit a {h}x{w} grid"
                )));
            }
            spread(rows, h)
                .flat_map(|r| spread(cols, w).map(move |c| (r, c)))
                .collect()
        }
        ProbeKind::Vertical { count } => {
            if count == 0 || count > h {
                return Err(PaintError::invalid(format!(
                    "cannot place {count} probes in one column of {h} rows"
                )));
            }
            let col = 3 * w / 4;
            spread(count, h).map(|r| (r, col)).collect()
        }
    };
    if let Some(p) = inlet_pos {
        if positions.contains(&p) {
            return Err(PaintError::invalid(format!(
                "inlet probe {p:?} collides with the {kind:?} layout"
            )));
        }
        positions.push(p);
    }
    ProbeSet::new(positions, grid, inlet_pos.is_some())
}

/// Probe readings over consecutive frames: `values[(k · n_probes + p) · 2 + c]`
/// is component `c` (u, v) at probe `p` in frame `t_start + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementWindow<T> {
    pub values: Vec<T>,
    pub probes: ProbeSet,
    pub t_start: usize,
    pub window_length: usize,
}

impl<T: Scalar> MeasurementWindow<T> {
    /// `(u, v)` at probe `p` in window frame `k`.
    pub fn reading(&self, k: usize, p: usize) -> (T, T) {
        let base = (k * self.probes.len() + p) * 2;
        (self.values[base], self.values[base + 1])
    }

    /// Keeps only the last `keep` frames of the window.
    pub fn last_frames(&self, keep: usize) -> Result<Self> {
        if keep == 0 || keep > self.window_length {
            return Err(PaintError::invalid(format!(
                "cannot keep {keep} of {} measured frames",
                self.window_length
            )));
        }
        let drop = self.window_length - keep;
        let stride = self.probes.len() * 2;
        Ok(MeasurementWindow {
            values: self.values[drop * stride..].to_vec(),
            probes: self.probes.clone(),
            t_start: self.t_start + drop,
            window_length: keep,
        })
    }
}

/// Reads `frames` at the probes, adding `N(0, σ²)` noise when `noise_sigma > 0`.
pub fn emit_frames<T: Scalar>(
    frames: &[Field2D<T>],
    probes: &ProbeSet,
    t_start: usize,
    noise_sigma: T,
    seed: u64,
) -> Result<MeasurementWindow<T>> {
    if frames.is_empty() {
        return Err(PaintError::invalid("measurement window needs at least one frame"));
    }
    let (h, w) = probes.grid();
    if frames[0].height() != h || frames[0].width() != w {
        return Err(PaintError::shape(
            "emit",
            format!("probes on {h}x{w}, frames {}x{}", frames[0].height(), frames[0].width()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(frames.len() * probes.len() * 2);
    for f in frames {
        for &(r, c) in probes.positions() {
            let (u, v) = f.at(r, c);
            if noise_sigma > T::zero() {
                values.push(u + noise_sigma * standard_normal::<T, _>(&mut rng));
                values.push(v + noise_sigma * standard_normal::<T, _>(&mut rng));
            } else {
                values.push(u);
                values.push(v);
            }
        }
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(PaintError::NonFinite { op: "emit" });
    }
    Ok(MeasurementWindow {
        values,
        probes: probes.clone(),
        t_start,
        window_length: frames.len(),
    })
}

/// Emission `m_t ~ p_e(m_t | x_t)` for frames `[t_start, t_start + window_length)`.
pub fn emit<T: Scalar>(
    traj: &Trajectory<T>,
    probes: &ProbeSet,
    t_start: usize,
    window_length: usize,
    noise_sigma: T,
    seed: u64,
) -> Result<MeasurementWindow<T>> {
    if window_length == 0 || t_start + window_length > traj.len() {
        return Err(PaintError::invalid(format!(
            "window [{t_start}, {}) outside trajectory of {} frames",
            t_start + window_length,
            traj.len()
        )));
    }
    emit_frames(&traj.frames[t_start..t_start + window_length], probes, t_start, noise_sigma, seed)
}

/// Per-frame mask and scattered probe values on the full grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedWindowEncoding<T> {
    pub frames: usize,
    pub h: usize,
    pub w: usize,
    /// `[frames, h, w]`, 1 at probe pixels.
    pub mask: Vec<T>,
    /// `[frames, 2, h, w]`, probe values at probe pixels, 0 elsewhere.
    pub values: Vec<T>,
}

impl<T: Scalar> MaskedWindowEncoding<T> {
    /// `[frames, 3, h, w]` channel stack `(mask, u, v)`.
    pub fn to_channels(&self) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = Vec::with_capacity(self.frames * 3 * hw);
        for f in 0..self.frames {
            out.extend_from_slice(&self.mask[f * hw..(f + 1) * hw]);
            out.extend_from_slice(&self.values[f * 2 * hw..(f + 1) * 2 * hw]);
        }
        out
    }

    /// Number of unmasked pixels in frame `f`.
    pub fn mask_count(&self, f: usize) -> usize {
        let hw = self.h * self.w;
        self.mask[f * hw..(f + 1) * hw].iter().filter(|&&m| m == T::one()).count()
    }

    /// Clears mask and values of the first `frames` frames.
    pub fn clear_frames(&mut self, frames: usize) {
        let hw = self.h * self.w;
        let n = frames.min(self.frames);
        self.mask[..n * hw].fill(T::zero());
        self.values[..n * 2 * hw].fill(T::zero());
    }
}

/// Scatters a measurement window onto an `h × w` grid, padding with
/// `total_frames − window_length` unmeasured frames at the end.
pub fn encode_padded<T: Scalar>(mw: &MeasurementWindow<T>, grid: (usize, usize), total_frames: usize) -> Result<MaskedWindowEncoding<T>> {
    let (h, w) = grid;
    if mw.probes.grid() != grid {
        return Err(PaintError::shape(
            "encode",
            format!("probes on {:?}, target grid {grid:?}", mw.probes.grid()),
        ));
    }
    if total_frames < mw.window_length {
        return Err(PaintError::invalid(format!(
            "encoding of {total_frames} frames cannot hold {} measured frames",
            mw.window_length
        )));
    }
    let hw = h * w;
    let mut mask = vec![T::zero(); total_frames * hw];
    let mut values = vec![T::zero(); total_frames * 2 * hw];
    let pix = mw.probes.pixel_indices();
    for k in 0..mw.window_length {
        for (p, &px) in pix.iter().enumerate() {
            let (u, v) = mw.reading(k, p);
            mask[k * hw + px] = T::one();
            values[k * 2 * hw + px] = u;
            values[k * 2 * hw + hw + px] = v;
        }
    }
    Ok(MaskedWindowEncoding { frames: total_frames, h, w, mask, values })
}

pub fn encode<T: Scalar>(mw: &MeasurementWindow<T>, grid: (usize, usize)) -> Result<MaskedWindowEncoding<T>> {
    encode_padded(mw, grid, mw.window_length)
}

/// Reads the encoded values back at the probe pixels.
pub fn decode<T: Scalar>(enc: &MaskedWindowEncoding<T>, probes: &ProbeSet, window_length: usize) -> Vec<T> {
    let hw = enc.h * enc.w;
    let pix = probes.pixel_indices();
    let mut out = Vec::with_capacity(window_length * pix.len() * 2);
    for k in 0..window_length {
        for &px in &pix {
            out.push(enc.values[k * 2 * hw + px]);
            out.push(enc.values[k * 2 * hw + hw + px]);
        }
    }
    out
}
