use crate::error::{PaintError, Result};

/// Reconstruction error at one measurement-window length.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub h: usize,
    /// One MSE per seed.
    pub mse: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
}

/// Evaluates `mse_at(h, seed)` for every window length and seed.
pub fn window_sweep(
    hs: &[usize],
    seeds: &[u64],
    mut mse_at: impl FnMut(usize, u64) -> Result<f64>,
) -> Result<Vec<SweepPoint>> {
    if hs.is_empty() || seeds.is_empty() {
        return Err(PaintError::invalid("window sweep needs at least one h and one seed"));
    }
    hs.iter()
        .map(|&h| {
            let mse = seeds.iter().map(|&s| mse_at(h, s)).collect::<Result<Vec<_>>>()?;
            let n = mse.len() as f64;
            let mean = mse.iter().sum::<f64>() / n;
            let std = if mse.len() > 1 {
                (mse.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(SweepPoint { h, mse, mean, std })
        })
        .collect()
}

/// Whether the mean error never rises by more than one standard deviation
/// (of the larger point) as `h` grows.
pub fn non_increasing_within_sigma(points: &[SweepPoint]) -> bool {
    points.windows(2).all(|w| w[1].mean <= w[0].mean + w[0].std.max(w[1].std))
}
