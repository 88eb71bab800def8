use rand::Rng;

use super::{fan_in_bound, Graph, Mode, ParamId, ParamStore, Real, Segments, Tensor, Var};
use crate::error::{Error, Result};

/// Dense channel mixing, `[Co, Ci]` weight plus bias. Also used as the 1x1
/// 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = fan_in_bound(cin);
        Ok(Self {
            w: store.add_uniform(format!("{name}.weight"), vec![cout, cin], bound, rng)?,
            b: store.add_uniform(format!("{name}.bias"), vec![cout], bound, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        g.linear(x, w, b)
    }
}

/// Same-padded 1-D convolution with weight `[Co, Ci, K]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv1d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = fan_in_bound(cin * kernel);
        Ok(Self {
            w: store.add_uniform(format!("{name}.weight"), vec![cout, cin, kernel], bound, rng)?,
            b: store.add_uniform(format!("{name}.bias"), vec![cout], bound, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, segs: &Segments) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        g.conv1d(x, w, b, segs)
    }
}

/// Batch statistics observed by a train-mode [`BatchNorm`] pass, applied to
/// the running estimates once the step is accepted.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub layer: BatchNorm,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchStats<T> {
    pub fn apply(&self, store: &mut ParamStore<T>) {
        let m = T::of(self.layer.momentum);
        let one = T::one();
        for (r, &v) in store
            .get_mut(self.layer.running_mean)
            .tensor
            .data_mut()
            .iter_mut()
            .zip(&self.mean)
        {
            *r = (one - m) * *r + m * v;
        }
        for (r, &v) in store
            .get_mut(self.layer.running_var)
            .tensor
            .data_mut()
            .iter_mut()
            .zip(&self.var)
        {
            *r = (one - m) * *r + m * v;
        }
    }
}

/// Per-channel batch normalisation with affine `(weight, bias)` and running
/// statistics. The 1-D and 2-D variants differ only in which positions are
/// pooled, which the channel-major layout already folds together.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.weight"), Tensor::filled(vec![channels], T::one()), true)?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(vec![channels]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(vec![channels]), false)?,
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::filled(vec![channels], T::one()),
                false,
            )?,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (gamma, beta) = (g.param(store, self.gamma), g.param(store, self.beta));
        let running = match mode {
            Mode::Train => None,
            Mode::Eval => Some((
                store.tensor(self.running_mean).data(),
                store.tensor(self.running_var).data(),
            )),
        };
        let (y, stats) = g.batch_norm(x, gamma, beta, running, self.eps)?;
        Ok((
            y,
            stats.map(|(mean, var)| BatchStats {
                layer: *self,
                mean,
                var,
            }),
        ))
    }
}

/// Normalisation across channels at each position.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.weight"), Tensor::filled(vec![channels], T::one()), true)?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(vec![channels]), true)?,
            eps: 1e-5,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(store, self.gamma), g.param(store, self.beta));
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Multi-head self-attention with learned query/key/value/output
/// projections (all with bias) and dropout on the attention weights.
#[derive(Clone, Copy, Debug)]
pub struct Mhsa {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dropout: f64,
}

impl Mhsa {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!(
                "attention dropout must be in [0, 1), got {dropout}"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            heads,
            dropout,
        })
    }

    /// Self-attention over the positions of each segment of `x: [D, N]`.
    /// Returns the output and the attention node (for weight inspection).
    pub fn forward<T: Real, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        segs: &Segments,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let a = g.attention(q, k, v, self.heads, segs, self.dropout, mode, rng)?;
        Ok((self.out.forward(g, store, a)?, a))
    }
}
