use super::Tensor;
use crate::error::{PaintError, Result};
use crate::scalar::{c, Scalar};

/// Hyperparameters of the AdamW optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Moment buffers and step counter, one pair of buffers per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub hyper: AdamW,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(hyper: AdamW, params: &[Tensor<T>]) -> Self {
        AdamWState {
            hyper,
            first_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step_count: 0,
        }
    }

    /// One AdamW update with decoupled weight decay:
    /// `p ← p − lr·(m̂/(√v̂ + eps) + λ·p)`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(PaintError::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(PaintError::shape(
                "adamw_step",
                format!(
                    "{} params, {} grads, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first_moment[i].len() != p.numel() {
                return Err(PaintError::shape(
                    "adamw_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamW { beta1, beta2, eps, weight_decay } = self.hyper;
        let (b1, b2) = (c::<T>(beta1), c::<T>(beta2));
        let bc1 = c::<T>(1.0 - beta1.powi(t));
        let bc2 = c::<T>(1.0 - beta2.powi(t));
        let (lr_t, eps_t, wd) = (c::<T>(lr), c::<T>(eps), c::<T>(weight_decay));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gr;
                *vi = b2 * *vi + (T::one() - b2) * gr * gr;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr_t * (mhat / (vhat.sqrt() + eps_t) + wd * *w);
            }
        }
        Ok(())
    }
}

/// Linear warmup from `lr_start` to `lr_peak`, then cosine decay to `lr_end`
/// at `total_steps`; constant `lr_end` afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(lr_start: f64, lr_peak: f64, lr_end: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if !(lr_start > 0.0 && lr_peak > 0.0 && lr_end > 0.0) {
            return Err(PaintError::invalid("learning rates must be positive"));
        }
        if warmup_steps >= total_steps {
            return Err(PaintError::invalid(format!(
                "warmup_steps {warmup_steps} must be below total_steps {total_steps}"
            )));
        }
        Ok(LrSchedule { lr_start, lr_peak, lr_end, warmup_steps, total_steps })
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            let f = step as f64 / self.warmup_steps as f64;
            return self.lr_start + (self.lr_peak - self.lr_start) * f;
        }
        if step >= self.total_steps {
            return self.lr_end;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let f = (step - self.warmup_steps) as f64 / span;
        self.lr_end + 0.5 * (self.lr_peak - self.lr_end) * (1.0 + (std::f64::consts::PI * f).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_without_decay_leaves_params() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::<f64>::zeros(&[3])];
        let mut st = AdamWState::new(AdamW { weight_decay: 0.0, ..AdamW::default() }, &p);
        st.step(&mut p, &g, 1e-3).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0, 0.5]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn single_scalar_step_matches_closed_form() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 → p = 1 − lr (1/(1+eps) + λ)
        let (lr, eps, wd) = (1e-2, 1e-8, 0.05);
        let expected = 1.0 - lr * (1.0 / (1.0 + eps) + wd * 1.0);
        let mut p = vec![Tensor::scalar(1.0_f64)];
        let g = vec![Tensor::scalar(1.0_f64)];
        let mut st = AdamWState::new(AdamW { eps, weight_decay: wd, ..AdamW::default() }, &p);
        st.step(&mut p, &g, lr).unwrap();
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks_by_lr_times_lambda() {
        let lr = 1e-3;
        let mut p = vec![Tensor::new(vec![2], vec![2.0, -4.0]).unwrap()];
        let g = vec![Tensor::<f64>::zeros(&[2])];
        let mut st = AdamWState::new(AdamW::default(), &p);
        st.step(&mut p, &g, lr).unwrap();
        assert!((p[0].data()[0] - (2.0 - lr * 0.05 * 2.0)).abs() < 1e-15);
        assert!((p[0].data()[1] - (-4.0 + lr * 0.05 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_shape_mismatch_and_bad_lr() {
        let mut p = vec![Tensor::<f64>::zeros(&[2])];
        let mut st = AdamWState::new(AdamW::default(), &p);
        assert!(st.step(&mut p, &[Tensor::zeros(&[3])], 1e-3).is_err());
        assert!(st.step(&mut p, &[Tensor::zeros(&[2])], 0.0).is_err());
    }

    #[test]
    fn schedule_hits_endpoints() {
        let s = LrSchedule::new(5e-7, 1e-4, 1e-5, 100, 1000).unwrap();
        assert_eq!(s.lr(0), 5e-7);
        assert!((s.lr(100) - 1e-4).abs() < 1e-18);
        assert!((s.lr(1000) - 1e-5).abs() < 1e-18);
        let mut prev = s.lr(100);
        for t in 101..=1000 {
            let l = s.lr(t);
            assert!(l <= prev + 1e-18 && l > 0.0);
            prev = l;
        }
        for t in 1..100 {
            assert!(s.lr(t) > s.lr(t - 1));
        }
    }
}
