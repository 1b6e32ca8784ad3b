//! Patch-attention networks: the window velocity model and the per-frame
//! autoregressive baseline.

use rand::Rng;

use crate::error::{PaintError, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{AttentionShape, LayerNormParams, Linear, ParamStore, Tape, Tensor, Var};

/// Channels fed to the window model per frame: `x_τ` (u, v), mask, measured u, v.
pub const WINDOW_IN_CHANNELS: usize = 5;
/// State channels (u, v).
pub const STATE_CHANNELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Attention among the patches of one frame.
    Spatial,
    /// Attention along time at one patch location.
    Temporal,
}

/// Pre-norm transformer block: attention then a GELU MLP, both residual.
#[derive(Clone, Debug)]
struct Block {
    kind: BlockKind,
    ln1: LayerNormParams,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNormParams,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: BlockKind,
        d: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Block {
            kind,
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            proj: Linear::new(store, &format!("{name}.proj"), d, d, rng),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, &format!("{name}.fc1"), d, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d, rng),
        }
    }

    /// `x: [frames · patches, d]`, frame-major.
    fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        frames: usize,
        patches: usize,
        heads: usize,
    ) -> Result<Var> {
        let d = tape.shape(x)[1];
        let y = self.ln1.forward(tape, p, x)?;
        let attn = match self.kind {
            BlockKind::Spatial => {
                let shape = AttentionShape { groups: frames, seq: patches, heads };
                self.attend(tape, p, y, shape)?
            }
            BlockKind::Temporal => {
                let y3 = tape.reshape(y, &[frames, patches, d])?;
                let yt = tape.swap_axes01(y3)?;
                let yt = tape.reshape(yt, &[patches * frames, d])?;
                let shape = AttentionShape { groups: patches, seq: frames, heads };
                let o = self.attend(tape, p, yt, shape)?;
                let o3 = tape.reshape(o, &[patches, frames, d])?;
                let o = tape.swap_axes01(o3)?;
                tape.reshape(o, &[frames * patches, d])?
            }
        };
        let x = tape.add(x, attn)?;
        let y = self.ln2.forward(tape, p, x)?;
        let y = self.fc1.forward(tape, p, y)?;
        let y = tape.gelu(y)?;
        let y = self.fc2.forward(tape, p, y)?;
        tape.add(x, y)
    }

    fn attend<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], y: Var, shape: AttentionShape) -> Result<Var> {
        let q = self.q.forward(tape, p, y)?;
        let k = self.k.forward(tape, p, y)?;
        let v = self.v.forward(tape, p, y)?;
        let o = tape.attention(q, k, v, shape)?;
        self.proj.forward(tape, p, o)
    }
}

fn check_common(grid: (usize, usize), patch: usize, dim: usize, heads: usize, layers: usize) -> Result<()> {
    if patch == 0 || grid.0 % patch != 0 || grid.1 % patch != 0 {
        return Err(PaintError::invalid(format!("patch {patch} does not tile a {}x{} grid", grid.0, grid.1)));
    }
    if dim == 0 || heads == 0 || dim % heads != 0 {
        return Err(PaintError::invalid(format!("width {dim} not divisible into {heads} heads")));
    }
    if layers == 0 {
        return Err(PaintError::invalid("model needs at least one block"));
    }
    Ok(())
}

/// Sinusoidal embedding of a flow time `τ ∈ [0, 1]`.
pub fn time_embedding<T: Scalar>(tau: T, d: usize) -> Vec<T> {
    let half = d / 2;
    let mut out = vec![T::zero(); d];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = tau * c(1000.0 * freq);
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowModelConfig {
    pub grid: (usize, usize),
    /// Total window length `h + n`.
    pub frames: usize,
    pub patch: usize,
    pub dim: usize,
    /// Blocks, alternating spatial and temporal starting with spatial.
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl WindowModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.grid, self.patch, self.dim, self.heads, self.layers)?;
        if self.frames == 0 || self.mlp_ratio == 0 {
            return Err(PaintError::invalid("window model needs frames >= 1 and mlp_ratio >= 1"));
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        (self.grid.0 / self.patch) * (self.grid.1 / self.patch)
    }

    fn to_values(self) -> Vec<f64> {
        [self.grid.0, self.grid.1, self.frames, self.patch, self.dim, self.layers, self.heads, self.mlp_ratio]
            .iter()
            .map(|&x| x as f64)
            .collect()
    }

    fn from_values(v: &[f64]) -> Result<Self> {
        let u = usize_values(v, 8)?;
        Ok(WindowModelConfig {
            grid: (u[0], u[1]),
            frames: u[2],
            patch: u[3],
            dim: u[4],
            layers: u[5],
            heads: u[6],
            mlp_ratio: u[7],
        })
    }
}

fn usize_values(v: &[f64], n: usize) -> Result<Vec<usize>> {
    if v.len() != n || v.iter().any(|x| !(x.fract() == 0.0 && *x >= 0.0)) {
        return Err(PaintError::Format(format!("model config record {v:?} is malformed")));
    }
    Ok(v.iter().map(|&x| x as usize).collect())
}

/// Velocity network over a whole state window.
#[derive(Clone, Debug)]
pub struct WindowModel<T> {
    pub config: WindowModelConfig,
    pub params: ParamStore<T>,
    embed: Linear,
    pos_spatial: usize,
    pos_temporal: usize,
    time1: Linear,
    time2: Linear,
    blocks: Vec<Block>,
    ln_out: LayerNormParams,
    out: Linear,
}

pub(crate) const CONFIG_KEY: &str = "config";

impl<T: Scalar> WindowModel<T> {
    pub fn new<R: Rng + ?Sized>(config: WindowModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let WindowModelConfig { frames, patch, dim: d, layers, mlp_ratio, .. } = config;
        let mut s = ParamStore::new();
        let embed = Linear::new(&mut s, "embed", WINDOW_IN_CHANNELS * patch * patch, d, rng);
        let pstd = c::<T>(0.02);
        let pos_spatial = s.add("pos_spatial", Tensor::randn(&[config.patches(), d], pstd, rng));
        let pos_temporal = s.add("pos_temporal", Tensor::randn(&[frames, 1, d], pstd, rng));
        let time1 = Linear::new(&mut s, "time.0", d, d, rng);
        let time2 = Linear::new(&mut s, "time.1", d, d, rng);
        let blocks = (0..layers)
            .map(|l| {
                let kind = if l % 2 == 0 { BlockKind::Spatial } else { BlockKind::Temporal };
                Block::new(&mut s, &format!("block{l}"), kind, d, mlp_ratio * d, rng)
            })
            .collect();
        let ln_out = LayerNormParams::new(&mut s, "ln_out", d);
        let out = Linear::with_std(&mut s, "out", d, STATE_CHANNELS * patch * patch, c(0.01), rng);
        Ok(WindowModel { config, params: s, embed, pos_spatial, pos_temporal, time1, time2, blocks, ln_out, out })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Shape of the state window `[frames, 2, H, W]`.
    pub fn state_shape(&self) -> [usize; 4] {
        [self.config.frames, STATE_CHANNELS, self.config.grid.0, self.config.grid.1]
    }

    /// Records `v̂(x_τ, τ, encoding)`. `x_tau` is `[frames, 2, H, W]`,
    /// `encoding` the `[frames, 3, H, W]` mask/value stack.
    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x_tau: Var, tau: T, encoding: Var) -> Result<Var> {
        let cfg = &self.config;
        let (f, np, d) = (cfg.frames, cfg.patches(), cfg.dim);
        let input = tape.concat_channels(&[x_tau, encoding])?;
        let want = [f, WINDOW_IN_CHANNELS, cfg.grid.0, cfg.grid.1];
        if tape.shape(input) != want {
            return Err(PaintError::shape("window_model", format!("input {:?}, expected {want:?}", tape.shape(input))));
        }
        let tokens = tape.linear_patch_embed(input, self.embed.weight(p), self.embed.bias(p), cfg.patch)?;
        let tokens = tape.reshape(tokens, &[f, np, d])?;
        let tokens = tape.add(tokens, p[self.pos_spatial])?;
        let tokens = tape.add(tokens, p[self.pos_temporal])?;
        let temb = tape.constant(&[d], time_embedding(tau, d))?;
        let temb = self.time1.forward(tape, p, temb)?;
        let temb = tape.gelu(temb)?;
        let temb = self.time2.forward(tape, p, temb)?;
        let tokens = tape.add(tokens, temb)?;
        let mut x = tape.reshape(tokens, &[f * np, d])?;
        for b in &self.blocks {
            x = b.forward(tape, p, x, f, np, cfg.heads)?;
        }
        let x = self.ln_out.forward(tape, p, x)?;
        let x = self.out.forward(tape, p, x)?;
        tape.unpatchify(x, f, STATE_CHANNELS, cfg.grid.0, cfg.grid.1, cfg.patch)
    }

    /// Evaluates the velocity without recording gradients.
    pub fn velocity(&self, x_tau: &[T], tau: T, encoding: &[T]) -> Result<Vec<T>> {
        let cfg = &self.config;
        let mut tape = Tape::new();
        let p = bind_frozen(&self.params, &mut tape)?;
        let x = tape.constant(&self.state_shape(), x_tau.to_vec())?;
        let e = tape.constant(&[cfg.frames, 3, cfg.grid.0, cfg.grid.1], encoding.to_vec())?;
        let out = self.forward(&mut tape, &p, x, tau, e)?;
        Ok(tape.value(out).to_vec())
    }

    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor<T>)> {
        model_entries(&self.params, self.config.to_values())
    }

    /// Rebuilds a model from checkpoint entries written by
    /// [`WindowModel::checkpoint_entries`].
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let (cfg, params) = split_config(entries)?;
        let config = WindowModelConfig::from_values(&cfg)?;
        let mut m = Self::new(config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        m.params.load(params)?;
        Ok(m)
    }
}

/// Binds parameters as untracked constants.
pub(crate) fn bind_frozen<T: Scalar>(store: &ParamStore<T>, tape: &mut Tape<T>) -> Result<Vec<Var>> {
    store.tensors().iter().map(|t| tape.constant(t.shape(), t.data().to_vec())).collect()
}

fn model_entries<T: Scalar>(params: &ParamStore<T>, config: Vec<f64>) -> Vec<(String, Tensor<T>)> {
    let n = config.len();
    let mut out = vec![(
        CONFIG_KEY.to_string(),
        Tensor::new(vec![n], config.into_iter().map(T::lit).collect()).expect("config record"),
    )];
    out.extend(params.entries().map(|(k, t)| (k.to_string(), t.clone())));
    out
}

type Entries<T> = Vec<(String, Tensor<T>)>;

fn split_config<T: Scalar>(entries: Entries<T>) -> Result<(Vec<f64>, Entries<T>)> {
    let mut cfg = None;
    let mut rest = Vec::with_capacity(entries.len());
    for (k, t) in entries {
        if k == CONFIG_KEY {
            cfg = Some(t.data().iter().map(|x| x.as_f64()).collect());
        } else {
            rest.push((k, t));
        }
    }
    let cfg = cfg.ok_or_else(|| PaintError::Format("checkpoint has no model config record".into()))?;
    Ok((cfg, rest))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArModelConfig {
    pub grid: (usize, usize),
    /// Number of previous states fed to each step.
    pub context: usize,
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of each block's MLP.
    pub mlp_hidden: usize,
}

impl ArModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.grid, self.patch, self.dim, self.heads, self.layers)?;
        if self.context == 0 || self.mlp_hidden == 0 {
            return Err(PaintError::invalid("AR model needs context >= 1 and mlp_hidden >= 1"));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        STATE_CHANNELS * self.context + 3
    }

    pub fn patches(&self) -> usize {
        (self.grid.0 / self.patch) * (self.grid.1 / self.patch)
    }

    /// Parameter count without building the model.
    pub fn param_count(&self) -> usize {
        let (d, p2) = (self.dim, self.patch * self.patch);
        let embed = self.in_channels() * p2 * d + d;
        let block = 4 * (d * d + d) + 4 * d + (d * self.mlp_hidden + self.mlp_hidden) + (self.mlp_hidden * d + d);
        embed + self.patches() * d + self.layers * block + 2 * d + d * STATE_CHANNELS * p2 + STATE_CHANNELS * p2
    }

    /// Same width, depth and patching as `paint`, with the MLP width chosen
    /// so the parameter count is as close as possible to the window model's.
    pub fn matched_to(paint: &WindowModelConfig, paint_params: usize, context: usize) -> Self {
        let base = ArModelConfig {
            grid: paint.grid,
            context,
            patch: paint.patch,
            dim: paint.dim,
            layers: paint.layers,
            heads: paint.heads,
            mlp_hidden: 1,
        };
        (1..=16 * paint.dim)
            .map(|h| ArModelConfig { mlp_hidden: h, ..base })
            .min_by_key(|c| c.param_count().abs_diff(paint_params))
            .expect("non-empty search range")
    }

    fn to_values(self) -> Vec<f64> {
        [self.grid.0, self.grid.1, self.context, self.patch, self.dim, self.layers, self.heads, self.mlp_hidden]
            .iter()
            .map(|&x| x as f64)
            .collect()
    }

    fn from_values(v: &[f64]) -> Result<Self> {
        let u = usize_values(v, 8)?;
        Ok(ArModelConfig {
            grid: (u[0], u[1]),
            context: u[2],
            patch: u[3],
            dim: u[4],
            layers: u[5],
            heads: u[6],
            mlp_hidden: u[7],
        })
    }
}

/// Next-frame network: previous states plus the mask/value channels of the
/// frame being predicted, all spatial attention; predicts the increment over
/// the most recent state.
#[derive(Clone, Debug)]
pub struct ArModel<T> {
    pub config: ArModelConfig,
    pub params: ParamStore<T>,
    embed: Linear,
    pos: usize,
    blocks: Vec<Block>,
    ln_out: LayerNormParams,
    out: Linear,
}

impl<T: Scalar> ArModel<T> {
    pub fn new<R: Rng + ?Sized>(config: ArModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ArModelConfig { patch, dim: d, layers, mlp_hidden, .. } = config;
        let mut s = ParamStore::new();
        let embed = Linear::new(&mut s, "embed", config.in_channels() * patch * patch, d, rng);
        let pos = s.add("pos_spatial", Tensor::randn(&[config.patches(), d], c::<T>(0.02), rng));
        let blocks = (0..layers)
            .map(|l| Block::new(&mut s, &format!("block{l}"), BlockKind::Spatial, d, mlp_hidden, rng))
            .collect();
        let ln_out = LayerNormParams::new(&mut s, "ln_out", d);
        let out = Linear::with_std(&mut s, "out", d, STATE_CHANNELS * patch * patch, c(0.01), rng);
        let m = ArModel { config, params: s, embed, pos, blocks, ln_out, out };
        debug_assert_eq!(m.params.count(), config.param_count());
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Records the next-state prediction. `states` is `[1, 2·context, H, W]`
    /// (oldest first), `encoding` the `[1, 3, H, W]` mask/value stack of the
    /// predicted frame.
    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], states: Var, encoding: Var) -> Result<Var> {
        let cfg = &self.config;
        let (h, w) = cfg.grid;
        let input = tape.concat_channels(&[states, encoding])?;
        let want = [1, cfg.in_channels(), h, w];
        if tape.shape(input) != want {
            return Err(PaintError::shape("ar_model", format!("input {:?}, expected {want:?}", tape.shape(input))));
        }
        let x = tape.linear_patch_embed(input, self.embed.weight(p), self.embed.bias(p), cfg.patch)?;
        let mut x = tape.add(x, p[self.pos])?;
        for b in &self.blocks {
            x = b.forward(tape, p, x, 1, cfg.patches(), cfg.heads)?;
        }
        let x = self.ln_out.forward(tape, p, x)?;
        let x = self.out.forward(tape, p, x)?;
        let delta = tape.unpatchify(x, 1, STATE_CHANNELS, h, w, cfg.patch)?;
        let hw2 = STATE_CHANNELS * h * w;
        let flat = tape.reshape(states, &[cfg.context, hw2])?;
        // the newest state is the last context row
        let last = last_row(tape, flat, cfg.context)?;
        let last = tape.reshape(last, &[1, STATE_CHANNELS, h, w])?;
        tape.add(last, delta)
    }

    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor<T>)> {
        model_entries(&self.params, self.config.to_values())
    }

    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let (cfg, params) = split_config(entries)?;
        let config = ArModelConfig::from_values(&cfg)?;
        let mut m = Self::new(config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        m.params.load(params)?;
        Ok(m)
    }
}

/// Selects row `rows − 1` of a `[rows, n]` variable, differentiably.
fn last_row<T: Scalar>(tape: &mut Tape<T>, x: Var, rows: usize) -> Result<Var> {
    if rows == 1 {
        return Ok(x);
    }
    let mut sel = vec![T::zero(); rows];
    sel[rows - 1] = T::one();
    let sel = tape.constant(&[1, rows], sel)?;
    tape.matmul(sel, x)
}
