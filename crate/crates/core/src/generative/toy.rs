//! Two-dimensional Gaussian target for checking the flow-matching machinery
//! against a closed-form distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::flow::{euler_integrate, gaussian_noise};
use super::model::{bind_frozen, time_embedding};
use super::train::{fit, TrainConfig, TrainIo, TrainResult, Trainable};
use crate::error::{PaintError, Result};
use crate::scalar::{c, standard_normal, Scalar};
use crate::tensor::{Mlp, ParamStore, Tape, Tensor, Var};

const TIME_DIM: usize = 16;

/// `N(mean, cov)` in two dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianTarget {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl GaussianTarget {
    fn cholesky(&self) -> Result<[[f64; 2]; 2]> {
        let a = self.cov[0][0];
        if !(a > 0.0) || self.cov[0][1] != self.cov[1][0] {
            return Err(PaintError::invalid("covariance must be symmetric positive definite"));
        }
        let l00 = a.sqrt();
        let l10 = self.cov[1][0] / l00;
        let d = self.cov[1][1] - l10 * l10;
        if !(d > 0.0) {
            return Err(PaintError::invalid("covariance must be symmetric positive definite"));
        }
        Ok([[l00, 0.0], [l10, d.sqrt()]])
    }

    pub fn sample<T: Scalar>(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
        let l = self.cholesky()?;
        let mut out = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let z0: f64 = standard_normal(rng);
            let z1: f64 = standard_normal(rng);
            out.push(c(self.mean[0] + l[0][0] * z0));
            out.push(c(self.mean[1] + l[1][0] * z0 + l[1][1] * z1));
        }
        Ok(out)
    }
}

/// MLP velocity field `v̂(x, τ)` on points of the plane.
#[derive(Clone, Debug)]
pub struct PointVelocity<T> {
    pub params: ParamStore<T>,
    net: Mlp,
    hidden: usize,
}

impl<T: Scalar> PointVelocity<T> {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = Mlp::new(&mut params, "toy", &[2 + TIME_DIM, hidden, hidden, 2], &mut rng);
        PointVelocity { params, net, hidden }
    }

    fn input(points: &[T], taus: &[T]) -> Vec<T> {
        let mut x = Vec::with_capacity(taus.len() * (2 + TIME_DIM));
        for (pt, &tau) in points.chunks(2).zip(taus) {
            x.extend_from_slice(pt);
            x.extend(time_embedding(tau, TIME_DIM));
        }
        x
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], points: &[T], taus: &[T]) -> Result<Var> {
        let x = tape.constant(&[taus.len(), 2 + TIME_DIM], Self::input(points, taus))?;
        self.net.forward(tape, p, x)
    }

    pub fn velocity(&self, points: &[T], tau: T) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let p = bind_frozen(&self.params, &mut tape)?;
        let taus = vec![tau; points.len() / 2];
        let v = self.forward(&mut tape, &p, points, &taus)?;
        Ok(tape.value(v).to_vec())
    }
}

impl<T: Scalar> Trainable<T> for PointVelocity<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
    fn checkpoint_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut v = vec![("config".to_string(), Tensor::scalar(T::from_usize_lossy(self.hidden)))];
        v.extend(self.params.entries().map(|(k, t)| (k.to_string(), t.clone())));
        v
    }
    fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let hidden = entries
            .iter()
            .find(|(k, _)| k == "config")
            .map(|(_, t)| t.data()[0].as_f64() as usize)
            .ok_or_else(|| PaintError::Format("toy checkpoint lacks config".into()))?;
        let mut m = Self::new(hidden, 0);
        m.params.load(entries.into_iter().filter(|(k, _)| k != "config").collect())?;
        Ok(m)
    }
}

/// Flow matching from `N(0, I)` to the target with `rows` points per step.
pub fn train_toy<T: Scalar>(
    target: &GaussianTarget,
    model: PointVelocity<T>,
    cfg: &TrainConfig,
    rows: usize,
) -> Result<TrainResult<PointVelocity<T>, T>> {
    fit(model, cfg, &TrainIo::default(), |m, tape, p, rng| {
        let x1 = target.sample::<T>(rows, rng)?;
        let x0 = gaussian_noise::<T>(2 * rows, rng);
        let taus: Vec<T> = (0..rows).map(|_| c(rand::Rng::gen::<f64>(rng))).collect();
        let xt: Vec<T> = x0
            .iter()
            .zip(&x1)
            .enumerate()
            .map(|(i, (&a, &b))| (T::one() - taus[i / 2]) * a + taus[i / 2] * b)
            .collect();
        let target_v: Vec<T> = x1.iter().zip(&x0).map(|(&b, &a)| b - a).collect();
        let v = m.forward(tape, p, &xt, &taus)?;
        super::flow::weighted_mse(tape, v, &target_v, &[T::one()], &[1])
    })
}

/// Draws `n` points with `steps` Euler steps.
pub fn sample_toy<T: Scalar>(model: &PointVelocity<T>, n: usize, steps: usize, seed: u64) -> Result<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = gaussian_noise(2 * n, &mut rng);
    euler_integrate(x0, steps, |x, tau| model.velocity(x, tau))
}

/// Sample mean and covariance of interleaved 2-D points.
pub fn moments<T: Scalar>(points: &[T]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = (points.len() / 2) as f64;
    let mut mean = [0.0; 2];
    for pt in points.chunks(2) {
        mean[0] += pt[0].as_f64() / n;
        mean[1] += pt[1].as_f64() / n;
    }
    let mut cov = [[0.0; 2]; 2];
    for pt in points.chunks(2) {
        let d = [pt[0].as_f64() - mean[0], pt[1].as_f64() - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j] / (n - 1.0);
            }
        }
    }
    (mean, cov)
}
