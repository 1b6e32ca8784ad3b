//! Jacobian products along a rollout `x_i = F_i(x_{i−1})`, measured through
//! Jacobian–vector and vector–Jacobian products so the state never needs a
//! dense Jacobian.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PaintError, Result};
use crate::generative::{bind_frozen, context_channels, ar_step, ArModel};
use crate::scalar::{c, standard_normal, Scalar};
use crate::sensing::MaskedWindowEncoding;
use crate::tensor::{Tape, Tensor};
use crate::dynsys::Field2D;

/// A sequence of linearised steps with products against their Jacobians.
pub trait StepChain {
    fn dim(&self) -> usize;
    fn steps(&self) -> usize;
    /// `J_i v` for step `i` (0-based).
    fn jvp(&self, i: usize, v: &[f64]) -> Result<Vec<f64>>;
    /// `J_iᵀ u` for step `i`.
    fn vjp(&self, i: usize, u: &[f64]) -> Result<Vec<f64>>;
}

/// Spectral norms along a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianSeries {
    /// `‖J_i‖₂` of each step.
    pub step_norms: Vec<f64>,
    /// `ln ‖J_i ⋯ J_1‖₂` for every prefix.
    pub log_product_norms: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Power iteration on `AᵀA` with `A = J_{hi−1} ⋯ J_{lo}`; returns `‖A‖₂`
/// and leaves the top right singular vector in `v`.
fn range_norm<C: StepChain + ?Sized>(chain: &C, lo: usize, hi: usize, v: &mut Vec<f64>, iters: usize) -> Result<f64> {
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let mut x = v.clone();
        for i in lo..hi {
            x = chain.jvp(i, &x)?;
        }
        sigma = norm(&x);
        if sigma == 0.0 {
            return Ok(0.0);
        }
        for i in (lo..hi).rev() {
            x = chain.vjp(i, &x)?;
        }
        if normalize(&mut x) == 0.0 {
            return Ok(0.0);
        }
        *v = x;
    }
    Ok(sigma)
}

/// Per-step and prefix-product spectral norms by power iteration. Each
/// prefix warm-starts from the previous singular vector.
pub fn product_norm_series<C: StepChain + ?Sized>(chain: &C, iters: usize, seed: u64) -> Result<JacobianSeries> {
    let n = chain.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start: Vec<f64> = (0..chain.dim()).map(|_| standard_normal(&mut rng)).collect();
    if normalize(&mut start) == 0.0 {
        return Err(PaintError::invalid("Jacobian chain has zero dimension"));
    }
    let mut step_norms = Vec::with_capacity(n);
    let mut log_product_norms = Vec::with_capacity(n);
    let mut vp = start.clone();
    for i in 0..n {
        let mut v = start.clone();
        step_norms.push(range_norm(chain, i, i + 1, &mut v, iters)?);
        log_product_norms.push(range_norm(chain, 0, i + 1, &mut vp, iters)?.ln());
    }
    Ok(JacobianSeries { step_norms, log_product_norms })
}

/// Logistic-map chain: scalar derivatives `r(1 − 2x)`.
pub struct ScalarChain(pub Vec<f64>);

impl StepChain for ScalarChain {
    fn dim(&self) -> usize {
        1
    }
    fn steps(&self) -> usize {
        self.0.len()
    }
    fn jvp(&self, i: usize, v: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.0[i] * v[0]])
    }
    fn vjp(&self, i: usize, u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.0[i] * u[0]])
    }
}

/// Exact series for a scalar chain: `‖J_i‖ = |J_i|`, products multiply.
pub fn scalar_series(derivs: &[f64]) -> JacobianSeries {
    let mut acc = 0.0;
    JacobianSeries {
        step_norms: derivs.iter().map(|d| d.abs()).collect(),
        log_product_norms: derivs
            .iter()
            .map(|d| {
                acc += d.abs().ln();
                acc
            })
            .collect(),
    }
}

/// Next-state map of an AR model at one point: `f(states) → x̂`.
/// `states` is the flattened `[2·context, H, W]` context stack.
pub fn ar_apply<T: Scalar>(model: &ArModel<T>, states: &[f64], enc: &MaskedWindowEncoding<T>) -> Result<Vec<f64>> {
    let (h, w) = model.config.grid;
    let frames: Vec<Field2D<T>> = states
        .chunks(2 * h * w)
        .map(|ch| Field2D::from_channels(h, w, &ch.iter().map(|&x| c::<T>(x)).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let out = ar_step(model, &frames, enc)?;
    Ok(out.to_channels().iter().map(|x| x.as_f64()).collect())
}

/// `(∂f/∂states)ᵀ u` by one reverse pass.
pub fn ar_vjp<T: Scalar>(model: &ArModel<T>, states: &[f64], enc: &MaskedWindowEncoding<T>, u: &[f64]) -> Result<Vec<f64>> {
    let cfg = &model.config;
    let (h, w) = cfg.grid;
    let mut tape = Tape::new();
    let p = bind_frozen(&model.params, &mut tape)?;
    let s = Tensor::new(vec![1, 2 * cfg.context, h, w], states.iter().map(|&x| c::<T>(x)).collect())?.with_grad();
    let s = tape.leaf(&s);
    let e = tape.constant(&[1, 3, h, w], enc.to_channels())?;
    let out = model.forward(&mut tape, &p, s, e)?;
    let uw = tape.constant(tape.shape(out).to_vec().as_slice(), u.iter().map(|&x| c::<T>(x)).collect())?;
    let prod = tape.mul(out, uw)?;
    let loss = tape.sum(prod)?;
    let g = tape.backward(loss)?;
    Ok(g.tensor(s).data().iter().map(|x| x.as_f64()).collect())
}

/// `(∂f/∂states) v` by central differences with step `h`.
pub fn ar_jvp_fd<T: Scalar>(
    model: &ArModel<T>,
    states: &[f64],
    enc: &MaskedWindowEncoding<T>,
    v: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let plus: Vec<f64> = states.iter().zip(v).map(|(&s, &d)| s + h * d).collect();
    let minus: Vec<f64> = states.iter().zip(v).map(|(&s, &d)| s - h * d).collect();
    let fp = ar_apply(model, &plus, enc)?;
    let fm = ar_apply(model, &minus, enc)?;
    Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Dense `∂f/∂states` (row-major, outputs × inputs) by reverse passes.
pub fn ar_jacobian_autodiff<T: Scalar>(model: &ArModel<T>, states: &[f64], enc: &MaskedWindowEncoding<T>) -> Result<Vec<f64>> {
    let (h, w) = model.config.grid;
    let out_dim = 2 * h * w;
    let mut jac = Vec::with_capacity(out_dim * states.len());
    let mut e = vec![0.0; out_dim];
    for r in 0..out_dim {
        e[r] = 1.0;
        jac.extend(ar_vjp(model, states, enc, &e)?);
        e[r] = 0.0;
    }
    Ok(jac)
}

/// Dense `∂f/∂states` by central differences, one column per input.
pub fn ar_jacobian_fd<T: Scalar>(model: &ArModel<T>, states: &[f64], enc: &MaskedWindowEncoding<T>, h: f64) -> Result<Vec<f64>> {
    let n = states.len();
    let mut cols = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        cols.push(ar_jvp_fd(model, states, enc, &e, h)?);
        e[j] = 0.0;
    }
    let out_dim = cols.first().map_or(0, Vec::len);
    Ok((0..out_dim).flat_map(|r| cols.iter().map(move |col| col[r])).collect())
}

/// AR rollout linearised on its companion state `(x_{i−context+1}, …, x_i)`:
/// each step shifts the context and appends `f(context)`.
pub struct ArChain<'a, T> {
    model: &'a ArModel<T>,
    points: Vec<Vec<f64>>,
    encodings: Vec<MaskedWindowEncoding<T>>,
    fd_step: f64,
}

impl<'a, T: Scalar> ArChain<'a, T> {
    /// Rolls the model forward from `context` (normalized states, oldest
    /// first) with one encoding per predicted frame.
    pub fn new(model: &'a ArModel<T>, context: &[Field2D<T>], encodings: Vec<MaskedWindowEncoding<T>>) -> Result<Self> {
        if context.len() != model.config.context {
            return Err(PaintError::shape(
                "ar_chain",
                format!("{} context states for context {}", context.len(), model.config.context),
            ));
        }
        let block = 2 * model.config.grid.0 * model.config.grid.1;
        let mut z: Vec<f64> = context_channels(context).iter().map(|x| x.as_f64()).collect();
        let mut points = Vec::with_capacity(encodings.len());
        for enc in &encodings {
            let next = ar_apply(model, &z, enc)?;
            points.push(z.clone());
            z.drain(..block);
            z.extend(next);
        }
        Ok(ArChain { model, points, encodings, fd_step: 1e-4 })
    }

    fn block(&self) -> usize {
        2 * self.model.config.grid.0 * self.model.config.grid.1
    }
}

impl<T: Scalar> StepChain for ArChain<'_, T> {
    fn dim(&self) -> usize {
        self.block() * self.model.config.context
    }
    fn steps(&self) -> usize {
        self.points.len()
    }
    fn jvp(&self, i: usize, v: &[f64]) -> Result<Vec<f64>> {
        let nv = norm(v);
        let mut out = v[self.block()..].to_vec();
        if nv == 0.0 {
            out.resize(v.len(), 0.0);
            return Ok(out);
        }
        // difference along the unit direction, rescaled
        let dir: Vec<f64> = v.iter().map(|x| x / nv).collect();
        let jv = ar_jvp_fd(self.model, &self.points[i], &self.encodings[i], &dir, self.fd_step)?;
        out.extend(jv.iter().map(|x| x * nv));
        Ok(out)
    }
    fn vjp(&self, i: usize, u: &[f64]) -> Result<Vec<f64>> {
        let b = self.block();
        let mut out = ar_vjp(self.model, &self.points[i], &self.encodings[i], &u[u.len() - b..])?;
        // the shift moves old slot j + 1 into new slot j
        for j in 0..u.len() - b {
            out[j + b] += u[j];
        }
        Ok(out)
    }
}
