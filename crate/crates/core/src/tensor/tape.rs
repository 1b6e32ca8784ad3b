use super::Tensor;
use crate::error::{PaintError, Result};
use crate::scalar::{c, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a fused multi-head attention call: `groups` independent
/// sequences of `seq` tokens each, rows stored group-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub groups: usize,
    pub seq: usize,
    pub heads: usize,
}

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize, bidx: Broadcast },
    Sub { a: usize, b: usize, bidx: Broadcast },
    Mul { a: usize, b: usize, bidx: Broadcast },
    Scale { a: usize, s: T },
    LayerNorm { x: usize, gamma: usize, beta: usize, d: usize, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { x: usize, dy: Vec<T> },
    Softmax { x: usize, n: usize },
    Attention { q: usize, k: usize, v: usize, shape: AttentionShape, probs: Vec<T> },
    Permute { x: usize, perm: Vec<usize> },
    Reshape { x: usize },
    Concat { inputs: Vec<usize>, outer: usize, widths: Vec<usize> },
    Sum { x: usize },
    Mean { x: usize },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode autodiff tape. Every forward op appends a node; `backward`
/// consumes the tape and returns gradients for every leaf that asked for one.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// How the elements of a broadcast operand map onto the output.
enum Broadcast {
    Same,
    /// The operand matches the trailing axes and repeats every `n` elements.
    Cycle(usize),
    /// Flat operand index of every output element.
    Index(Vec<usize>),
}

impl Broadcast {
    #[inline]
    fn for_each(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Broadcast::Same => (0..n).for_each(|i| f(i, i)),
            Broadcast::Cycle(m) => {
                for base in (0..n).step_by(*m) {
                    for j in 0..*m {
                        f(base + j, j);
                    }
                }
            }
            Broadcast::Index(idx) => idx.iter().enumerate().for_each(|(i, &j)| f(i, j)),
        }
    }
}

/// Pairs each element of a tensor of shape `a` with the element of `b` it
/// meets under right-aligned broadcasting.
fn broadcast_index(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.len() > a.len() {
        return Err(PaintError::shape(op, format!("{a:?} vs {b:?}")));
    }
    let offset = a.len() - b.len();
    let lead = b.iter().take_while(|&&d| d == 1).count();
    if b[lead..] == a[offset + lead..] {
        return Ok(Broadcast::Cycle(numel(b).max(1)));
    }
    let mut bstride = vec![0usize; a.len()];
    let mut s = 1;
    for i in (0..b.len()).rev() {
        let (da, db) = (a[offset + i], b[i]);
        if db == da {
            bstride[offset + i] = s;
        } else if db != 1 {
            return Err(PaintError::shape(op, format!("{a:?} vs {b:?}")));
        }
        s *= db;
    }
    let n = numel(a);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; a.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        idx.push(cur);
        for ax in (0..a.len()).rev() {
            counter[ax] += 1;
            cur += bstride[ax];
            if counter[ax] < a[ax] {
                break;
            }
            cur -= bstride[ax] * a[ax];
            counter[ax] = 0;
        }
    }
    Ok(Broadcast::Index(idx))
}

/// `out[i, :] = Σ_p a[i, p] b[p, :]` for row-major `a: [m, k]`, `b: [k, n]`.
fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), out, (n, 1));
}

/// Bounds-checked `C += A·B` over strided row-major/transposed views.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    c: &mut [T],
    sc: (usize, usize),
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, s: (usize, usize)| (rows - 1) * s.0 + (cols - 1) * s.1;
    assert!(last(m, k, sa) < a.len() && last(k, n, sb) < b.len() && last(m, n, sc) < c.len());
    // SAFETY: the assertion bounds every strided index; `c` is a distinct
    // mutable slice so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_acc(
            m,
            k,
            n,
            a.as_ptr(),
            (sa.0 as isize, sa.1 as isize),
            b.as_ptr(),
            (sb.0 as isize, sb.1 as isize),
            c.as_mut_ptr(),
            (sc.0 as isize, sc.1 as isize),
        );
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let k = c::<T>(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = c::<T>(0.044_715);
    let half = c::<T>(0.5);
    let inner = k * (x + a * x * x * x);
    // tanh through one exp: cheaper than libm tanh, exact to rounding.
    let e = (c::<T>(-2.0) * inner.abs()).exp();
    let th = ((T::one() - e) / (T::one() + e)).copysign(inner);
    let y = half * x * (T::one() + th);
    let dinner = k * (T::one() + c::<T>(3.0) * a * x * x);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * dinner;
    (y, dy)
}

/// Index permutation that splits `[f, ch, h, w]` frames into non-overlapping
/// `p × p` patches laid out as `[f · (h/p)(w/p), ch · p · p]`.
/// Entry `i` is the source index of output element `i`.
fn patch_permutation(f: usize, ch: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let (ph, pw) = (h / p, w / p);
    let feat = ch * p * p;
    let mut perm = vec![0usize; f * ch * h * w];
    for fi in 0..f {
        for pi in 0..ph {
            for pj in 0..pw {
                let row = (fi * ph + pi) * pw + pj;
                for cc in 0..ch {
                    for di in 0..p {
                        for dj in 0..p {
                            let col = (cc * p + di) * p + dj;
                            let src = ((fi * ch + cc) * h + pi * p + di) * w + pj * p + dj;
                            perm[row * feat + col] = src;
                        }
                    }
                }
            }
        }
    }
    perm
}

fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(PaintError::NonFinite { op: op_name });
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. } | Op::Add { a, b, .. } | Op::Sub { a, b, .. } | Op::Mul { a, b, .. } => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
            Op::Scale { a, .. } => self.nodes[*a].needs_grad,
            Op::LayerNorm { x, gamma, beta, .. } => {
                self.nodes[*x].needs_grad || self.nodes[*gamma].needs_grad || self.nodes[*beta].needs_grad
            }
            Op::Attention { q, k, v, .. } => {
                self.nodes[*q].needs_grad || self.nodes[*k].needs_grad || self.nodes[*v].needs_grad
            }
            Op::Gelu { x, .. }
            | Op::Softmax { x, .. }
            | Op::Permute { x, .. }
            | Op::Reshape { x }
            | Op::Sum { x }
            | Op::Mean { x } => self.nodes[*x].needs_grad,
            Op::Concat { inputs, .. } => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor as a leaf. Gradients are tracked when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: tensor.data().to_vec(),
            op: Op::Leaf,
            needs_grad: tensor.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an untracked constant.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded node has consistent shape")
    }

    /// `a: [.., k] × b: [k, n] -> [.., n]`; leading dims of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(PaintError::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k;
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        self.push("matmul", shape, out, Op::MatMul { a: a.0, b: b.0, m, k, n })
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>, Broadcast)> {
        let sa = self.shape(a).to_vec();
        let bidx = broadcast_index(name, &sa, self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(va.len());
        bidx.for_each(va.len(), |i, j| out.push(f(va[i], vb[j])));
        Ok((sa, out, bidx))
    }

    /// Elementwise `a + b`; `b` may broadcast into `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, bidx) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", shape, out, Op::Add { a: a.0, b: b.0, bidx })
    }

    /// Elementwise `a - b`; `b` may broadcast into `a`'s shape.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, bidx) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", shape, out, Op::Sub { a: a.0, b: b.0, bidx })
    }

    /// Elementwise `a ⊙ b`; `b` may broadcast into `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, bidx) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", shape, out, Op::Mul { a: a.0, b: b.0, bidx })
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", shape, out, Op::Scale { a: a.0, s })
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta` of
    /// length `d`. Rows whose variance is below 1e-12 normalise to zero.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| PaintError::shape("layernorm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(PaintError::shape(
                "layernorm",
                format!("x {sx:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let rows = numel(&sx) / d;
        let xv = self.value(x);
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        let dn = T::from_usize_lossy(d);
        let tiny = c::<T>(1e-12);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            if var >= tiny {
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    xhat[r * d + j] = (row[j] - mean) * rs;
                }
            }
            for j in 0..d {
                out[r * d + j] = xhat[r * d + j] * g[j] + bt[j];
            }
        }
        self.push(
            "layernorm",
            sx,
            out,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, d, xhat, rstd },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let (out, dy) = self.value(x).iter().map(|&v| gelu_parts(v)).unzip();
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, out, Op::Gelu { x: x.0, dy })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| PaintError::shape("softmax", "scalar input"))?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            softmax_row(row);
        }
        self.push("softmax", shape, out, Op::Softmax { x: x.0, n })
    }

    /// Exact multi-head scaled dot-product attention. `q`, `k`, `v` are
    /// `[groups · seq, d]`; each group attends only within itself.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        let AttentionShape { groups, seq, heads } = shape;
        let ok = sq.len() == 2
            && self.shape(k) == sq.as_slice()
            && self.shape(v) == sq.as_slice()
            && sq[0] == groups * seq
            && heads > 0
            && sq[1] % heads == 0;
        if !ok {
            return Err(PaintError::shape(
                "attention",
                format!("q {sq:?} k {:?} v {:?} for {shape:?}", self.shape(k), self.shape(v)),
            ));
        }
        let d = sq[1];
        let dh = d / heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); groups * heads * seq * seq];
        let mut out = vec![T::zero(); groups * seq * d];
        for g in 0..groups {
            for h in 0..heads {
                let off = g * seq * d + h * dh;
                let p = &mut probs[(g * heads + h) * seq * seq..][..seq * seq];
                // S = Q Kᵀ over this head's columns
                gemm(seq, dh, seq, &qv[off..], (d, 1), &kv[off..], (1, d), p, (seq, 1));
                for row in p.chunks_mut(seq) {
                    row.iter_mut().for_each(|x| *x *= scale);
                    softmax_row(row);
                }
                gemm(seq, seq, dh, p, (seq, 1), &vv[off..], (d, 1), &mut out[off..], (d, 1));
            }
        }
        self.push("attention", sq, out, Op::Attention { q: q.0, k: k.0, v: v.0, shape, probs })
    }

    /// Splits `[f, ch, h, w]` frames into `p × p` patches, giving
    /// `[f · (h/p)(w/p), ch · p · p]` rows ready for a linear embedding.
    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || p == 0 || s[2] % p != 0 || s[3] % p != 0 {
            return Err(PaintError::shape("patchify", format!("{s:?} with patch {p}")));
        }
        let perm = patch_permutation(s[0], s[1], s[2], s[3], p);
        let shape = vec![s[0] * (s[2] / p) * (s[3] / p), s[1] * p * p];
        self.permute("patchify", x, perm, shape)
    }

    /// Inverse of [`Tape::patchify`]: `[f · (h/p)(w/p), ch · p · p] -> [f, ch, h, w]`.
    pub fn unpatchify(&mut self, x: Var, frames: usize, channels: usize, h: usize, w: usize, p: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let ok = p > 0 && h % p == 0 && w % p == 0 && s == [frames * (h / p) * (w / p), channels * p * p];
        if !ok {
            return Err(PaintError::shape(
                "unpatchify",
                format!("{s:?} to [{frames}, {channels}, {h}, {w}] with patch {p}"),
            ));
        }
        let perm = invert_permutation(&patch_permutation(frames, channels, h, w, p));
        self.permute("unpatchify", x, perm, vec![frames, channels, h, w])
    }

    /// `[a, b, inner] -> [b, a, inner]`.
    pub fn swap_axes01(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(PaintError::shape("swap_axes01", format!("{s:?}")));
        }
        let (a, b, inner) = (s[0], s[1], s[2]);
        let mut perm = Vec::with_capacity(a * b * inner);
        for j in 0..b {
            for i in 0..a {
                perm.extend((0..inner).map(|t| (i * b + j) * inner + t));
            }
        }
        self.permute("swap_axes01", x, perm, vec![b, a, inner])
    }

    fn permute(&mut self, name: &'static str, x: Var, perm: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let out = perm.iter().map(|&i| xv[i]).collect();
        self.push(name, shape, out, Op::Permute { x: x.0, perm })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(PaintError::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape { x: x.0 })
    }

    /// Concatenates `[n, c_i, ...]` tensors along axis 1 (the channel axis).
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| PaintError::shape("concat_channels", "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(PaintError::shape("concat_channels", format!("{s0:?}")));
        }
        let outer = s0[0];
        let trailing = &s0[2..];
        let inner: usize = trailing.iter().product();
        let mut widths = Vec::with_capacity(inputs.len());
        let mut total_c = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != s0.len() || s[0] != outer || &s[2..] != trailing {
                return Err(PaintError::shape("concat_channels", format!("{s0:?} vs {s:?}")));
            }
            widths.push(s[1] * inner);
            total_c += s[1];
        }
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&v, &wd) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v)[o * wd..(o + 1) * wd]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total_c;
        let ids = inputs.iter().map(|v| v.0).collect();
        self.push("concat_channels", shape, out, Op::Concat { inputs: ids, outer, widths })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum { x: x.0 })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len());
        self.push("mean", vec![1], vec![s], Op::Mean { x: x.0 })
    }

    /// Linear layer `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Patch embedding: `[f, ch, h, w]` frames to `[f · patches, d]` tokens.
    pub fn linear_patch_embed(&mut self, x: Var, w: Var, b: Var, p: usize) -> Result<Var> {
        let patches = self.patchify(x, p)?;
        self.linear(patches, w, b)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`, consuming the
    /// tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(PaintError::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = Accumulator { nodes: &nodes, grads: &mut grads };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    // dA += G·Bᵀ, dB += Aᵀ·G
                    acc.with(*a, |ga| gemm(m, n, k, &g, (n, 1), bv, (1, n), ga, (k, 1)));
                    acc.with(*b, |gb| gemm(k, m, n, av, (1, k), &g, (n, 1), gb, (n, 1)));
                }
                Op::Add { a, b, bidx } | Op::Sub { a, b, bidx } => {
                    let sign = if matches!(node.op, Op::Sub { .. }) { -T::one() } else { T::one() };
                    acc.with(*a, |ga| {
                        for (o, &x) in ga.iter_mut().zip(&g) {
                            *o += x;
                        }
                    });
                    acc.with(*b, |gb| bidx.for_each(g.len(), |i, j| gb[j] += sign * g[i]));
                }
                Op::Mul { a, b, bidx } => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    acc.with(*a, |ga| bidx.for_each(g.len(), |i, j| ga[i] += g[i] * bv[j]));
                    acc.with(*b, |gb| bidx.for_each(g.len(), |i, j| gb[j] += g[i] * av[i]));
                }
                Op::Scale { a, s } => acc.with(*a, |ga| {
                    for (o, &x) in ga.iter_mut().zip(&g) {
                        *o += x * *s;
                    }
                }),
                Op::LayerNorm { x, gamma, beta, d, xhat, rstd } => {
                    let d = *d;
                    let gv = &nodes[*gamma].value;
                    acc.with(*gamma, |gg| {
                        for (r, grow) in g.chunks(d).enumerate() {
                            for j in 0..d {
                                gg[j] += grow[j] * xhat[r * d + j];
                            }
                        }
                    });
                    acc.with(*beta, |gb| {
                        for grow in g.chunks(d) {
                            for (o, &x) in gb.iter_mut().zip(grow) {
                                *o += x;
                            }
                        }
                    });
                    let dn = T::from_usize_lossy(d);
                    acc.with(*x, |gx| {
                        for (r, grow) in g.chunks(d).enumerate() {
                            let rs = rstd[r];
                            if rs == T::zero() {
                                continue;
                            }
                            let xh = &xhat[r * d..(r + 1) * d];
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for j in 0..d {
                                let dxh = grow[j] * gv[j];
                                s1 += dxh;
                                s2 += dxh * xh[j];
                            }
                            for j in 0..d {
                                let dxh = grow[j] * gv[j];
                                gx[r * d + j] += rs * (dxh - s1 / dn - xh[j] * s2 / dn);
                            }
                        }
                    });
                }
                Op::Gelu { x, dy } => acc.with(*x, |gx| {
                    for ((o, &gg), &d) in gx.iter_mut().zip(&g).zip(dy) {
                        *o += gg * d;
                    }
                }),
                Op::Softmax { x, n } => {
                    let y = &node.value;
                    acc.with(*x, |gx| {
                        for ((gxr, gr), yr) in gx.chunks_mut(*n).zip(g.chunks(*n)).zip(y.chunks(*n)) {
                            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                            for ((o, &gg), &yy) in gxr.iter_mut().zip(gr).zip(yr) {
                                *o += yy * (gg - dot);
                            }
                        }
                    });
                }
                Op::Attention { q, k, v, shape, probs } => {
                    attention_backward(&mut acc, &g, *q, *k, *v, *shape, probs);
                }
                Op::Permute { x, perm } => acc.with(*x, |gx| {
                    for (&src, &gg) in perm.iter().zip(&g) {
                        gx[src] += gg;
                    }
                }),
                Op::Reshape { x } => acc.with(*x, |gx| {
                    for (o, &gg) in gx.iter_mut().zip(&g) {
                        *o += gg;
                    }
                }),
                Op::Concat { inputs, outer, widths } => {
                    let row: usize = widths.iter().sum();
                    let mut off = 0;
                    for (&inp, &wd) in inputs.iter().zip(widths) {
                        acc.with(inp, |gi| {
                            for o in 0..*outer {
                                for t in 0..wd {
                                    gi[o * wd + t] += g[o * row + off + t];
                                }
                            }
                        });
                        off += wd;
                    }
                }
                Op::Sum { x } => acc.with(*x, |gx| {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }),
                Op::Mean { x } => {
                    let n = T::from_usize_lossy(nodes[*x].value.len());
                    acc.with(*x, |gx| {
                        for o in gx.iter_mut() {
                            *o += g[0] / n;
                        }
                    });
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        let leaf_mask: Vec<bool> = nodes
            .iter()
            .map(|n| matches!(n.op, Op::Leaf) && n.needs_grad)
            .collect();
        for (gr, &keep) in grads.iter_mut().zip(&leaf_mask) {
            if !keep {
                *gr = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}

struct Accumulator<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Accumulator<'_, T> {
    fn with(&mut self, idx: usize, f: impl FnOnce(&mut [T])) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        let n = self.nodes[idx].value.len();
        let buf = self.grads[idx].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }
}

fn attention_backward<T: Scalar>(
    acc: &mut Accumulator<'_, T>,
    g: &[T],
    q: usize,
    k: usize,
    v: usize,
    shape: AttentionShape,
    probs: &[T],
) {
    let AttentionShape { groups, seq, heads } = shape;
    let d = g.len() / (groups * seq);
    let dh = d / heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let nodes = acc.nodes;
    let (qv, kv, vv) = (&nodes[q].value, &nodes[k].value, &nodes[v].value);
    let n = groups * seq * d;
    let mut gq = vec![T::zero(); n];
    let mut gk = vec![T::zero(); n];
    let mut gv = vec![T::zero(); n];
    let mut ds = vec![T::zero(); seq * seq];
    for gi in 0..groups {
        for h in 0..heads {
            let off = gi * seq * d + h * dh;
            let p = &probs[(gi * heads + h) * seq * seq..][..seq * seq];
            // dV += Pᵀ dO ; dP = dO Vᵀ
            gemm(seq, seq, dh, p, (1, seq), &g[off..], (d, 1), &mut gv[off..], (d, 1));
            ds.iter_mut().for_each(|x| *x = T::zero());
            gemm(seq, dh, seq, &g[off..], (d, 1), &vv[off..], (1, d), &mut ds, (seq, 1));
            // dS = scale · P ⊙ (dP − rowsum(P ⊙ dP))
            for (drow, prow) in ds.chunks_mut(seq).zip(p.chunks(seq)) {
                let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (x, &pp) in drow.iter_mut().zip(prow) {
                    *x = pp * (*x - dot) * scale;
                }
            }
            gemm(seq, seq, dh, &ds, (seq, 1), &kv[off..], (d, 1), &mut gq[off..], (d, 1));
            gemm(seq, seq, dh, &ds, (1, seq), &qv[off..], (d, 1), &mut gk[off..], (d, 1));
        }
    }
    for (idx, buf) in [(q, gq), (k, gk), (v, gv)] {
        acc.with(idx, |dst| {
            for (o, x) in dst.iter_mut().zip(buf) {
                *o += x;
            }
        });
    }
}

/// Gradients of a scalar loss with respect to every tracked leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient buffer for `v`, or `None` when `v` is not a tracked leaf
    /// (or the loss does not depend on it).
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v` as a tensor; zeros when the loss does not depend on it.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape matches node"),
            None => Tensor::zeros(&shape),
        }
    }
}
