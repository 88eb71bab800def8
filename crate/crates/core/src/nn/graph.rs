use std::collections::HashMap;

use rand::Rng;

use super::{Mode, ParamId, ParamStore, Real, Segments, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param,
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        k: usize,
        segs: Segments,
        col: Vec<T>,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Norm {
        x: usize,
        gamma: usize,
        beta: usize,
        axis: NormAxis,
        batch: bool,
        xhat: Vec<T>,
        inv: Vec<T>,
    },
    Gelu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Pool {
        x: usize,
        segs: Segments,
        out_len: usize,
    },
    BroadcastAdd {
        x: usize,
        s: usize,
        segs: Segments,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        segs: Segments,
        probs: Vec<T>,
        mask: Option<Vec<T>>,
    },
    Mse {
        pred: usize,
        target: Vec<T>,
    },
    WeightedSum {
        x: usize,
        w: Vec<T>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NormAxis {
    /// Statistics per channel over all positions (batch norm).
    Channel,
    /// Statistics per position over all channels (layer norm).
    Position,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of one forward pass. Nodes are appended in evaluation order, which
/// is therefore a topological order; backward walks it in reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, usize>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adaptive pooling window `[start, end)` of output `i` out of `m` over `len`.
fn pool_window(i: usize, m: usize, len: usize) -> (usize, usize) {
    (i * len / m, ((i + 1) * len).div_ceil(m))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gather head `h` of a channel-major `[D, N]` tensor over one segment into a
/// row-major `len x dh` block.
fn gather_head<T: Real>(src: &[T], n: usize, h: usize, dh: usize, off: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len * dh];
    for d in 0..dh {
        let row = &src[(h * dh + d) * n + off..][..len];
        for (i, &v) in row.iter().enumerate() {
            out[i * dh + d] = v;
        }
    }
    out
}

fn scatter_head<T: Real>(dst: &mut [T], block: &[T], n: usize, h: usize, dh: usize, off: usize, len: usize) {
    for d in 0..dh {
        let row = &mut dst[(h * dh + d) * n + off..][..len];
        for (i, v) in row.iter_mut().enumerate() {
            *v += block[i * dh + d];
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Graph::backward`]; `None` if the leaf does
    /// not require gradients or backward has not run.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Softmax weights saved by an attention node, laid out per segment, then
    /// per head, as row-major `len x len` blocks.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, what: &str) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what.to_string()));
        }
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param => unreachable!("params are pushed directly"),
            Op::Conv1d { x, w, b, .. } | Op::Linear { x, w, b } => self.any_grad(&[*x, *w, *b]),
            Op::Norm { x, gamma, beta, .. } => self.any_grad(&[*x, *gamma, *beta]),
            Op::Gelu { x } | Op::Sigmoid { x } | Op::Dropout { x, .. } | Op::Pool { x, .. } => self.any_grad(&[*x]),
            Op::Add { a, b } | Op::Mul { a, b } => self.any_grad(&[*a, *b]),
            Op::BroadcastAdd { x, s, .. } => self.any_grad(&[*x, *s]),
            Op::Attention { q, k, v, .. } => self.any_grad(&[*q, *k, *v]),
            Op::Mse { pred, .. } => self.any_grad(&[*pred]),
            Op::WeightedSum { x, .. } => self.any_grad(&[*x]),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Constant leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Input, "input")
    }

    /// Leaf whose gradient is recorded (for input sensitivity checks).
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Result<Var> {
        let v = self.push(t, Op::Input, "input")?;
        self.nodes[v.0].needs_grad = true;
        Ok(v)
    }

    /// Leaf holding a copy of a stored parameter; repeated calls share a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var(i);
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.tensor.clone(),
            op: Op::Param,
            needs_grad: p.trainable,
        });
        let i = self.nodes.len() - 1;
        self.params.insert(id, i);
        Var(i)
    }

    /// Same-padded 1-D cross-correlation of `x: [Ci, N]` with `w: [Co, Ci, K]`
    /// (odd `K`) and bias `b: [Co]`, applied independently per segment.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, segs: &Segments) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 3 || bs != [ws[0]] || xs[0] != ws[1] || xs[1] != segs.total() {
            return Err(Error::Shape(format!(
                "conv1d: input {xs:?}, weight {ws:?}, bias {bs:?}, {} frames",
                segs.total()
            )));
        }
        let (ci, n, co, k) = (xs[0], xs[1], ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv1d: same padding needs an odd kernel, got {k}"
            )));
        }
        let pad = (k / 2) as isize;
        let xd = self.data(x);
        let mut col = vec![T::zero(); ci * k * n];
        for (off, len) in segs.iter() {
            for c in 0..ci {
                let src = &xd[c * n + off..][..len];
                for kk in 0..k {
                    let dst = &mut col[(c * k + kk) * n + off..][..len];
                    let shift = kk as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
                    for t in lo..hi {
                        dst[t] = src[(t as isize + shift) as usize];
                    }
                }
            }
        }
        let mut y = vec![T::zero(); co * n];
        T::gemm(co, ci * k, n, self.data(w), false, &col, false, T::zero(), &mut y);
        for (row, &bias) in y.chunks_mut(n).zip(self.data(b)) {
            row.iter_mut().for_each(|v| *v += bias);
        }
        let op = Op::Conv1d {
            x: x.0,
            w: w.0,
            b: b.0,
            k,
            segs: segs.clone(),
            col,
        };
        self.push(Tensor::new(vec![co, n], y)?, op, "conv1d")
    }

    /// Channel mixing `w: [Co, Ci]` at every position of `x: [Ci, ...]`,
    /// plus bias. Serves as the linear layer and as the 1x1 2-D convolution.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if ws.len() != 2 || bs != [ws[0]] || xs[0] != ws[1] {
            return Err(Error::Shape(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (co, ci) = (ws[0], ws[1]);
        let p = self.nodes[x.0].value.positions();
        let mut shape = xs.to_vec();
        shape[0] = co;
        let mut y = vec![T::zero(); co * p];
        T::gemm(co, ci, p, self.data(w), false, self.data(x), false, T::zero(), &mut y);
        for (row, &bias) in y.chunks_mut(p.max(1)).zip(self.data(b)) {
            row.iter_mut().for_each(|v| *v += bias);
        }
        self.push(Tensor::new(shape, y)?, Op::Linear { x: x.0, w: w.0, b: b.0 }, "linear")
    }

    /// 1x1 2-D convolution of `x: [Ci, H, W]`.
    pub fn conv2d_1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(Error::Shape(format!(
                "conv2d_1x1 expects [C, H, W], got {:?}",
                self.shape(x)
            )));
        }
        self.linear(x, w, b)
    }

    /// Per-channel normalisation over every non-channel position. With
    /// `running = None` batch statistics are used and returned as
    /// `(mean, unbiased variance)`; otherwise the given running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let c = self.shape(x)[0];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "batch_norm: {c} channels, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let p = self.nodes[x.0].value.positions();
        let xd = self.data(x);
        let mut stats = None;
        let (mean, inv): (Vec<f64>, Vec<f64>) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::Shape("batch_norm: running statistics width".into()));
                }
                (
                    rm.iter().map(|m| m.f64()).collect(),
                    rv.iter().map(|v| 1.0 / (v.f64() + eps).sqrt()).collect(),
                )
            }
            None => {
                if p < 2 {
                    return Err(Error::Statistics(format!(
                        "batch_norm in train mode needs at least 2 values per channel, got {p}"
                    )));
                }
                let mut means = Vec::with_capacity(c);
                let mut vars = Vec::with_capacity(c);
                for row in xd.chunks(p) {
                    let m = row.iter().map(|v| v.f64()).sum::<f64>() / p as f64;
                    let v = row.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / p as f64;
                    means.push(m);
                    vars.push(v);
                }
                let inv = vars.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                stats = Some((
                    means.iter().map(|&m| T::of(m)).collect(),
                    vars.iter().map(|&v| T::of(v * p as f64 / (p - 1) as f64)).collect(),
                ));
                (means, inv)
            }
        };
        let mut xhat = vec![T::zero(); xd.len()];
        for ch in 0..c {
            for i in 0..p {
                xhat[ch * p + i] = T::of((xd[ch * p + i].f64() - mean[ch]) * inv[ch]);
            }
        }
        let (g, bt) = (self.data(gamma), self.data(beta));
        let y: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| g[i / p] * h + bt[i / p])
            .collect();
        let shape = self.shape(x).to_vec();
        let op = Op::Norm {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            axis: NormAxis::Channel,
            batch: running.is_none(),
            xhat,
            inv: inv.into_iter().map(T::of).collect(),
        };
        Ok((self.push(Tensor::new(shape, y)?, op, "batch_norm")?, stats))
    }

    /// Normalisation across the channel axis at each position, with
    /// per-channel affine `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.shape(x)[0];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "layer_norm: {c} channels, affine {:?}",
                self.shape(gamma)
            )));
        }
        let p = self.nodes[x.0].value.positions();
        let xd = self.data(x);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv = vec![T::zero(); p];
        for i in 0..p {
            let m = (0..c).map(|ch| xd[ch * p + i].f64()).sum::<f64>() / c as f64;
            let v = (0..c).map(|ch| (xd[ch * p + i].f64() - m).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (v + eps).sqrt();
            inv[i] = T::of(s);
            for ch in 0..c {
                xhat[ch * p + i] = T::of((xd[ch * p + i].f64() - m) * s);
            }
        }
        let (g, bt) = (self.data(gamma), self.data(beta));
        let y: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| g[i / p] * h + bt[i / p])
            .collect();
        let shape = self.shape(x).to_vec();
        let op = Op::Norm {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            axis: NormAxis::Position,
            batch: true,
            xhat,
            inv,
        };
        self.push(Tensor::new(shape, y)?, op, "layer_norm")
    }

    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let y = self.data(x).iter().map(|v| T::of(gelu_parts(v.f64()).0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, y)?, Op::Gelu { x: x.0 }, "gelu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.data(x).iter().map(|v| T::of(sigmoid(v.f64()))).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, y)?, Op::Sigmoid { x: x.0 }, "sigmoid")
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let y = self.data(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, y)?, Op::Dropout { x: x.0, mask }, "dropout")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, y)?, Op::Add { a: a.0, b: b.0 }, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| p * q).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, y)?, Op::Mul { a: a.0, b: b.0 }, "mul")
    }

    /// Adaptive average pooling of each segment of `x: [C, N]` down to
    /// `out_len` positions; returns `[C, segments * out_len]`.
    pub fn adaptive_avg_pool(&mut self, x: Var, segs: &Segments, out_len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || xs[1] != segs.total() || out_len == 0 {
            return Err(Error::Shape(format!(
                "adaptive_avg_pool: input {xs:?}, {} frames, target {out_len}",
                segs.total()
            )));
        }
        let (c, n) = (xs[0], xs[1]);
        let m = segs.count() * out_len;
        let xd = self.data(x);
        let mut y = vec![T::zero(); c * m];
        for ch in 0..c {
            for (s, (off, len)) in segs.iter().enumerate() {
                for i in 0..out_len {
                    let (a, b) = pool_window(i, out_len, len);
                    let sum: f64 = xd[ch * n + off + a..ch * n + off + b].iter().map(|v| v.f64()).sum();
                    y[ch * m + s * out_len + i] = T::of(sum / (b - a) as f64);
                }
            }
        }
        let op = Op::Pool {
            x: x.0,
            segs: segs.clone(),
            out_len,
        };
        self.push(Tensor::new(vec![c, m], y)?, op, "adaptive_avg_pool")
    }

    /// `x: [C, N]` plus the per-segment column `s: [C, segments]` broadcast
    /// over that segment's positions.
    pub fn broadcast_add(&mut self, x: Var, s: Var, segs: &Segments) -> Result<Var> {
        let (xs, ss) = (self.shape(x), self.shape(s));
        if xs.len() != 2 || xs[1] != segs.total() || ss != [xs[0], segs.count()] {
            return Err(Error::Shape(format!("broadcast_add: {xs:?} + {ss:?}")));
        }
        let (c, n, b) = (xs[0], xs[1], segs.count());
        let owner = segs.owner();
        let (xd, sd) = (self.data(x), self.data(s));
        let y = (0..c * n).map(|i| xd[i] + sd[(i / n) * b + owner[i % n]]).collect();
        let op = Op::BroadcastAdd {
            x: x.0,
            s: s.0,
            segs: segs.clone(),
        };
        self.push(Tensor::new(vec![c, n], y)?, op, "broadcast_add")
    }

    /// Scaled dot-product attention of channel-major `q, k, v: [D, N]`
    /// split into `heads` heads, within each segment. In train mode the
    /// softmax weights are dropped out with probability `dropout`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention<R: Rng + ?Sized>(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: &Segments,
        dropout: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let qs = self.shape(q).to_vec();
        if qs.len() != 2 || self.shape(k) != qs || self.shape(v) != qs || qs[1] != segs.total() {
            return Err(Error::Shape(format!(
                "attention: q {qs:?}, k {:?}, v {:?}, {} frames",
                self.shape(k),
                self.shape(v),
                segs.total()
            )));
        }
        let (d, n) = (qs[0], qs[1]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {d} is not divisible by {heads} heads"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!(
                "attention dropout must be in [0, 1), got {dropout}"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let drop = mode == Mode::Train && dropout > 0.0;
        let keep = T::of(1.0 / (1.0 - dropout));
        let total: usize = segs.lens().iter().map(|l| l * l * heads).sum();
        let mut probs = Vec::with_capacity(total);
        let mut mask = drop.then(|| Vec::with_capacity(total));
        let mut out = vec![T::zero(); d * n];
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        for (off, len) in segs.iter() {
            for h in 0..heads {
                let qh = gather_head(qd, n, h, dh, off, len);
                let kh = gather_head(kd, n, h, dh, off, len);
                let vh = gather_head(vd, n, h, dh, off, len);
                let mut s = vec![T::zero(); len * len];
                T::gemm(len, dh, len, &qh, false, &kh, true, T::zero(), &mut s);
                for row in s.chunks_mut(len) {
                    let mx = row.iter().map(|v| v.f64() * scale).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for v in row.iter_mut() {
                        let e = (v.f64() * scale - mx).exp();
                        z += e;
                        *v = T::of(e);
                    }
                    row.iter_mut().for_each(|v| *v = T::of(v.f64() / z));
                }
                let weights = match mask.as_mut() {
                    Some(mask) => {
                        let m: Vec<T> = (0..len * len)
                            .map(|_| if rng.random::<f64>() < dropout { T::zero() } else { keep })
                            .collect();
                        let w = s.iter().zip(&m).map(|(&p, &mm)| p * mm).collect();
                        mask.extend(m);
                        w
                    }
                    None => s.clone(),
                };
                let mut oh = vec![T::zero(); len * dh];
                T::gemm(len, len, dh, &weights, false, &vh, false, T::zero(), &mut oh);
                scatter_head(&mut out, &oh, n, h, dh, off, len);
                probs.extend(s);
            }
        }
        let op = Op::Attention {
            q: q.0,
            k: k.0,
            v: v.0,
            heads,
            segs: segs.clone(),
            probs,
            mask,
        };
        self.push(Tensor::new(vec![d, n], out)?, op, "attention")
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.data(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(Error::Shape(format!(
                "mse: {} predictions, {} targets",
                p.len(),
                target.len()
            )));
        }
        let loss = p.iter().zip(target).map(|(&a, &b)| (a - b).f64().powi(2)).sum::<f64>() / p.len() as f64;
        let op = Op::Mse {
            pred: pred.0,
            target: target.to_vec(),
        };
        self.push(Tensor::scalar(T::of(loss)), op, "mse")
    }

    /// `sum_i w_i x_i`; scalar output.
    pub fn weighted_sum(&mut self, x: Var, w: &[T]) -> Result<Var> {
        if self.data(x).len() != w.len() {
            return Err(Error::Shape(format!(
                "weighted_sum: {} values, {} weights",
                self.data(x).len(),
                w.len()
            )));
        }
        let s = self.data(x).iter().zip(w).map(|(&a, &b)| (a * b).f64()).sum::<f64>();
        self.push(
            Tensor::scalar(T::of(s)),
            Op::WeightedSum { x: x.0, w: w.to_vec() },
            "weighted_sum",
        )
    }

    /// Accumulate gradients of the scalar `loss` into every reachable leaf.
    /// A second call without [`Graph::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "backward already ran on this graph; reset gradients first".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Backward(format!(
                "root must be a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop(i, &gy, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Input | Op::Param) || i == loss.0 {
                grads[i] = Some(gy);
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient for every entry of `store`, zero where the parameter was not
    /// reached (or not used) by the last backward pass.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        store
            .iter()
            .map(|(id, p)| {
                self.params
                    .get(&id)
                    .and_then(|&i| self.grads.get(i).and_then(|g| g.clone()))
                    .unwrap_or_else(|| vec![T::zero(); p.tensor.len()])
            })
            .collect()
    }

    fn backprop(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let slot = |grads: &mut [Option<Vec<T>>], j: usize, f: &mut dyn FnMut(&mut [T])| {
            if nodes[j].needs_grad {
                let g = grads[j].get_or_insert_with(|| vec![T::zero(); nodes[j].value.len()]);
                f(g);
            }
        };
        let val = |j: usize| nodes[j].value.data();
        let y = val(i);
        match &nodes[i].op {
            Op::Input | Op::Param => {}
            Op::Conv1d { x, w, b, k, segs, col } => {
                let ws = nodes[*w].value.shape();
                let (co, ci, n) = (ws[0], ws[1], segs.total());
                slot(grads, *w, &mut |g| {
                    T::gemm(co, n, ci * k, gy, false, col, true, T::one(), g)
                });
                slot(grads, *b, &mut |g| {
                    for (gb, row) in g.iter_mut().zip(gy.chunks(n)) {
                        *gb += row.iter().copied().sum();
                    }
                });
                if nodes[*x].needs_grad {
                    let mut dcol = vec![T::zero(); ci * k * n];
                    T::gemm(ci * k, co, n, val(*w), true, gy, false, T::zero(), &mut dcol);
                    let pad = (k / 2) as isize;
                    slot(grads, *x, &mut |g| {
                        for (off, len) in segs.iter() {
                            for c in 0..ci {
                                for kk in 0..*k {
                                    let src = &dcol[(c * k + kk) * n + off..][..len];
                                    let dst = &mut g[c * n + off..][..len];
                                    let shift = kk as isize - pad;
                                    let lo = (-shift).max(0) as usize;
                                    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
                                    for t in lo..hi {
                                        dst[(t as isize + shift) as usize] += src[t];
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Linear { x, w, b } => {
                let ws = nodes[*w].value.shape();
                let (co, ci) = (ws[0], ws[1]);
                let p = nodes[*x].value.positions();
                slot(grads, *w, &mut |g| {
                    T::gemm(co, p, ci, gy, false, val(*x), true, T::one(), g)
                });
                slot(grads, *b, &mut |g| {
                    for (gb, row) in g.iter_mut().zip(gy.chunks(p.max(1))) {
                        *gb += row.iter().copied().sum();
                    }
                });
                slot(grads, *x, &mut |g| {
                    T::gemm(ci, co, p, val(*w), true, gy, false, T::one(), g)
                });
            }
            Op::Norm {
                x,
                gamma,
                beta,
                axis,
                batch,
                xhat,
                inv,
            } => {
                let c = nodes[*x].value.shape()[0];
                let p = nodes[*x].value.positions();
                let gam = val(*gamma);
                slot(grads, *gamma, &mut |g| {
                    for (idx, (&d, &h)) in gy.iter().zip(xhat).enumerate() {
                        g[idx / p] += d * h;
                    }
                });
                slot(grads, *beta, &mut |g| {
                    for (idx, &d) in gy.iter().enumerate() {
                        g[idx / p] += d;
                    }
                });
                if nodes[*x].needs_grad {
                    let dxhat: Vec<f64> = gy
                        .iter()
                        .enumerate()
                        .map(|(idx, &d)| (d * gam[idx / p]).f64())
                        .collect();
                    let mut dx = vec![T::zero(); c * p];
                    match (axis, batch) {
                        (NormAxis::Channel, false) => {
                            for (idx, v) in dx.iter_mut().enumerate() {
                                *v = T::of(dxhat[idx] * inv[idx / p].f64());
                            }
                        }
                        (NormAxis::Channel, true) => {
                            for ch in 0..c {
                                let r = ch * p..(ch + 1) * p;
                                let s1: f64 = dxhat[r.clone()].iter().sum();
                                let s2: f64 = dxhat[r.clone()]
                                    .iter()
                                    .zip(&xhat[r.clone()])
                                    .map(|(a, h)| a * h.f64())
                                    .sum();
                                let k = inv[ch].f64() / p as f64;
                                for idx in r {
                                    dx[idx] = T::of(k * (p as f64 * dxhat[idx] - s1 - xhat[idx].f64() * s2));
                                }
                            }
                        }
                        (NormAxis::Position, _) => {
                            for pos in 0..p {
                                let mut s1 = 0.0;
                                let mut s2 = 0.0;
                                for ch in 0..c {
                                    s1 += dxhat[ch * p + pos];
                                    s2 += dxhat[ch * p + pos] * xhat[ch * p + pos].f64();
                                }
                                let k = inv[pos].f64() / c as f64;
                                for ch in 0..c {
                                    let idx = ch * p + pos;
                                    dx[idx] = T::of(k * (c as f64 * dxhat[idx] - s1 - xhat[idx].f64() * s2));
                                }
                            }
                        }
                    }
                    slot(grads, *x, &mut |g| add_into(g, &dx));
                }
            }
            Op::Gelu { x } => {
                let xd = val(*x);
                slot(grads, *x, &mut |g| {
                    for ((gi, &d), &xv) in g.iter_mut().zip(gy).zip(xd) {
                        *gi += d * T::of(gelu_parts(xv.f64()).1);
                    }
                });
            }
            Op::Sigmoid { x } => slot(grads, *x, &mut |g| {
                for ((gi, &d), &s) in g.iter_mut().zip(gy).zip(y) {
                    *gi += d * s * (T::one() - s);
                }
            }),
            Op::Dropout { x, mask } => slot(grads, *x, &mut |g| {
                for ((gi, &d), &m) in g.iter_mut().zip(gy).zip(mask) {
                    *gi += d * m;
                }
            }),
            Op::Add { a, b } => {
                slot(grads, *a, &mut |g| add_into(g, gy));
                slot(grads, *b, &mut |g| add_into(g, gy));
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (val(*a), val(*b));
                slot(grads, *a, &mut |g| {
                    for ((gi, &d), &o) in g.iter_mut().zip(gy).zip(bd) {
                        *gi += d * o;
                    }
                });
                slot(grads, *b, &mut |g| {
                    for ((gi, &d), &o) in g.iter_mut().zip(gy).zip(ad) {
                        *gi += d * o;
                    }
                });
            }
            Op::Pool { x, segs, out_len } => {
                let n = segs.total();
                let m = segs.count() * out_len;
                let c = nodes[*x].value.shape()[0];
                slot(grads, *x, &mut |g| {
                    for ch in 0..c {
                        for (s, (off, len)) in segs.iter().enumerate() {
                            for o in 0..*out_len {
                                let (a, b) = pool_window(o, *out_len, len);
                                let share = gy[ch * m + s * out_len + o] / T::of((b - a) as f64);
                                g[ch * n + off + a..ch * n + off + b]
                                    .iter_mut()
                                    .for_each(|v| *v += share);
                            }
                        }
                    }
                });
            }
            Op::BroadcastAdd { x, s, segs } => {
                let n = segs.total();
                let b = segs.count();
                slot(grads, *x, &mut |g| add_into(g, gy));
                let owner = segs.owner();
                slot(grads, *s, &mut |g| {
                    for (idx, &d) in gy.iter().enumerate() {
                        g[(idx / n) * b + owner[idx % n]] += d;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segs,
                probs,
                mask,
            } => {
                let (d, n) = (nodes[*q].value.shape()[0], segs.total());
                let dh = d / heads;
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut dq = vec![T::zero(); d * n];
                let mut dk = vec![T::zero(); d * n];
                let mut dv = vec![T::zero(); d * n];
                let mut at = 0;
                for (off, len) in segs.iter() {
                    for h in 0..*heads {
                        let p = &probs[at..at + len * len];
                        let mk = mask.as_ref().map(|m| &m[at..at + len * len]);
                        at += len * len;
                        let qh = gather_head(qd, n, h, dh, off, len);
                        let kh = gather_head(kd, n, h, dh, off, len);
                        let vh = gather_head(vd, n, h, dh, off, len);
                        let go = gather_head(gy, n, h, dh, off, len);
                        let weights: Vec<T> = match mk {
                            Some(m) => p.iter().zip(m).map(|(&a, &b)| a * b).collect(),
                            None => p.to_vec(),
                        };
                        let mut dw = vec![T::zero(); len * len];
                        T::gemm(len, dh, len, &go, false, &vh, true, T::zero(), &mut dw);
                        let mut dvh = vec![T::zero(); len * dh];
                        T::gemm(len, len, dh, &weights, true, &go, false, T::zero(), &mut dvh);
                        if let Some(m) = mk {
                            dw.iter_mut().zip(m).for_each(|(a, &b)| *a *= b);
                        }
                        for (drow, prow) in dw.chunks_mut(len).zip(p.chunks(len)) {
                            let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                            for (a, &b) in drow.iter_mut().zip(prow) {
                                *a = b * (*a - dot) * scale;
                            }
                        }
                        let mut dqh = vec![T::zero(); len * dh];
                        T::gemm(len, len, dh, &dw, false, &kh, false, T::zero(), &mut dqh);
                        let mut dkh = vec![T::zero(); len * dh];
                        T::gemm(len, len, dh, &dw, true, &qh, false, T::zero(), &mut dkh);
                        scatter_head(&mut dq, &dqh, n, h, dh, off, len);
                        scatter_head(&mut dk, &dkh, n, h, dh, off, len);
                        scatter_head(&mut dv, &dvh, n, h, dh, off, len);
                    }
                }
                slot(grads, *q, &mut |g| add_into(g, &dq));
                slot(grads, *k, &mut |g| add_into(g, &dk));
                slot(grads, *v, &mut |g| add_into(g, &dv));
            }
            Op::Mse { pred, target } => {
                let pd = val(*pred);
                let k = gy[0] * T::of(2.0 / pd.len() as f64);
                slot(grads, *pred, &mut |g| {
                    for ((gi, &a), &t) in g.iter_mut().zip(pd).zip(target) {
                        *gi += k * (a - t);
                    }
                });
            }
            Op::WeightedSum { x, w } => slot(grads, *x, &mut |g| {
                for (gi, &wi) in g.iter_mut().zip(w) {
                    *gi += gy[0] * wi;
                }
            }),
        }
        Ok(())
    }
}
