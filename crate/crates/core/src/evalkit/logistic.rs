use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynsys::{logistic_derivative, logistic_lyapunov, logistic_step};
use crate::error::{PaintError, Result};

use super::stats::ols_slope;

/// Deviation at which a biased rollout counts as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 0.1;

/// Rollout of the biased map `x̂ ← r x̂ (1 − x̂) + ε` against the true map.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceCurve {
    pub eps: f64,
    /// `|x̂_t − x_t|` for `t = 0, 1, …`.
    pub deviation: Vec<f64>,
    /// First `t` with deviation above [`DIVERGENCE_THRESHOLD`].
    pub divergence_time: Option<usize>,
    /// Least-squares slope of `ln |x̂_t − x_t|` over the pre-divergence part.
    pub growth_rate: f64,
}

pub fn logistic_counterexample(eps: f64, r: f64, x0: f64, max_steps: usize) -> Result<DivergenceCurve> {
    if !(eps >= 0.0 && eps < 1e-2) {
        return Err(PaintError::invalid(format!("bias eps = {eps} must lie in [0, 1e-2)")));
    }
    let (mut x, mut xh) = (x0, x0);
    let mut deviation = vec![0.0];
    let mut divergence_time = None;
    for t in 1..=max_steps {
        x = logistic_step(x, r)?;
        xh = (logistic_step(xh, r)? + eps).min(1.0);
        let d = (xh - x).abs();
        deviation.push(d);
        if d > DIVERGENCE_THRESHOLD && divergence_time.is_none() {
            divergence_time = Some(t);
        }
    }
    let end = divergence_time.unwrap_or(deviation.len());
    let logs: Vec<f64> = deviation[1..end].iter().filter(|&&d| d > 0.0).map(|d| d.ln()).collect();
    Ok(DivergenceCurve { eps, deviation, divergence_time, growth_rate: ols_slope(&logs) })
}

/// Divergence statistics over many on-attractor starts.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceSummary {
    pub eps: f64,
    pub mean_time: f64,
    /// `ln(0.1/ε)/λ̂`.
    pub predicted_time: f64,
    pub lyapunov: f64,
    pub starts: usize,
}

/// Mean divergence time over `starts` seeded initial conditions (each
/// burned in for 1000 steps), compared with the Lyapunov prediction.
pub fn divergence_summary(eps: f64, r: f64, starts: usize, seed: u64) -> Result<DivergenceSummary> {
    if eps <= 0.0 || starts == 0 {
        return Err(PaintError::invalid("divergence summary needs eps > 0 and starts >= 1"));
    }
    let lyapunov = logistic_lyapunov(0.3, r, 1000, 200_000)?;
    let predicted_time = (DIVERGENCE_THRESHOLD / eps).ln() / lyapunov;
    let max_steps = (20.0 * predicted_time).ceil() as usize + 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..starts {
        let mut x: f64 = rng.gen_range(0.05..0.95);
        for _ in 0..1000 {
            x = logistic_step(x, r)?;
        }
        let curve = logistic_counterexample(eps, r, x, max_steps)?;
        total += curve.divergence_time.unwrap_or(max_steps) as f64;
    }
    Ok(DivergenceSummary { eps, mean_time: total / starts as f64, predicted_time, lyapunov, starts })
}

/// Derivatives `J_i = r(1 − 2x_{i−1})` along the orbit from `x_k`, for
/// `i = k+1 ..= t`.
pub fn logistic_jacobians(x_k: f64, r: f64, steps: usize) -> Result<Vec<f64>> {
    let mut x = x_k;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(logistic_derivative(x, r));
        x = logistic_step(x, r)?;
    }
    Ok(out)
}
