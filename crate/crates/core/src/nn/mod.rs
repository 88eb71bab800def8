//! Reverse-mode automatic differentiation over a per-step tape, plus the
//! operator set and layers the predictor needs.
//!
//! Activations are stored channel-major: a tensor of shape `[C, ...]` holds
//! `C` contiguous rows, one per channel, over all remaining positions. A batch
//! of variable-length sequences is concatenated along time and described by
//! [`Segments`]; sequence-aware ops (convolution, attention, pooling) never
//! mix values across segment boundaries, so no padding is required.

mod graph;
mod layers;
mod optim;
mod param;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use crate::error::{Error, Result};

pub use graph::{Graph, Var};
pub use layers::{BatchNorm, BatchStats, Conv1d, LayerNorm, Linear, Mhsa};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamId, ParamStore, Parameter};

/// Floating-point element type of the engine.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + 'static
    + std::iter::Sum
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// Row-major `c = a' * b' + beta * c` where `a'` is `m x k` and `b'` is
    /// `k x n`; `ta`/`tb` mean the operand is stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, beta: Self, c: &mut [Self]);

    fn of(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite constant")
    }

    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn gemm_strides(m: usize, k: usize, n: usize, ta: bool, tb: bool) -> [isize; 6] {
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    [rsa as isize, csa as isize, rsb as isize, csb as isize, n as isize, 1]
}

fn gemm_check<T>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &[T]) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand too small"
    );
}

impl Real for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], ta: bool, b: &[f32], tb: bool, beta: f32, c: &mut [f32]) {
        gemm_check(m, k, n, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        let [rsa, csa, rsb, csb, rsc, csc] = gemm_strides(m, k, n, ta, tb);
        // SAFETY: bounds asserted above and strides describe dense row-major
        // (or transposed) buffers of exactly those sizes.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

impl Real for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
        gemm_check(m, k, n, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        let [rsa, csa, rsb, csb, rsc, csc] = gemm_strides(m, k, n, ta, tb);
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

/// Dense row-major array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (channel) dimension.
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Product of all non-channel dimensions.
    pub fn positions(&self) -> usize {
        self.data.len() / self.shape[0].max(1)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Lengths of the sequences concatenated along the time axis of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    lens: Vec<usize>,
    offsets: Vec<usize>,
}

impl Segments {
    pub fn new(lens: Vec<usize>) -> Result<Self> {
        if lens.is_empty() || lens.contains(&0) {
            return Err(Error::Shape(format!("segments need positive lengths, got {lens:?}")));
        }
        let mut offsets = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            offsets.push(acc);
            acc += l;
        }
        Ok(Self { lens, offsets })
    }

    pub fn single(len: usize) -> Result<Self> {
        Self::new(vec![len])
    }

    pub fn count(&self) -> usize {
        self.lens.len()
    }

    pub fn total(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.lens.last().copied().unwrap_or(0)
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    /// `(offset, len)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().copied().zip(self.lens.iter().copied())
    }

    /// Segment index of every position.
    pub fn owner(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for (i, &l) in self.lens.iter().enumerate() {
            out.extend(std::iter::repeat_n(i, l));
        }
        out
    }
}

/// Whether stochastic layers and batch statistics are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Bound of the fan-in uniform initialisation: `1 / sqrt(fan_in)`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}
