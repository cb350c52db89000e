//! Dense 4-D tensors in NCHW layout and the parameter bundle of a convolution.

use std::fmt;

use rand_core::Rng as _;
use rand_pcg::Pcg32;

use crate::error::{Error, Result};

/// Shape of a tensor as `[n, c, h, w]`.
pub type Dims = [usize; 4];

/// A dense batch of feature maps, row-major in the order n → c → h → w.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "data length {} does not match dims {:?} ({} elements)",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor::full(dims, 0.0)
    }

    pub fn full(dims: Dims, value: f64) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every site in storage order.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    /// Uniform draws in `[lo, hi)` taken from `rng` in storage order.
    pub fn uniform(dims: Dims, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let len = dims.iter().product();
        let data = (0..len).map(|_| rng.uniform(lo, hi)).collect();
        Tensor { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    /// The `h × w` plane of channel `c` in sample `n`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let size = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * size;
        &self.data[start..start + size]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let size = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * size;
        &mut self.data[start..start + size]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// `self += k · other`; dims must agree.
    pub fn axpy(&mut self, k: f64, other: &Tensor) -> Result<()> {
        self.expect_dims(other.dims, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_dims(other.dims, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `Σ self ⊙ other`, summed in storage order.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_dims(other.dims, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Samples `start..start + count` of the batch.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.dims[0] {
            return Err(Error::shape(format!(
                "batch slice {}..{} out of range for batch of {}",
                start,
                start + count,
                self.dims[0]
            )));
        }
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        let data = self.data[start * per..(start + count) * per].to_vec();
        Ok(Tensor {
            dims: [count, self.dims[1], self.dims[2], self.dims[3]],
            data,
        })
    }

    /// Stacks tensors of identical `(c, h, w)` along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let [_, c, h, w] = first.dims;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims[1..] != [c, h, w] {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    p.dims, first.dims
                )));
            }
            n += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            dims: [n, c, h, w],
            data,
        })
    }

    /// Channels `start..start + count` of every sample.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.dims;
        if start + count > c {
            return Err(Error::shape(format!(
                "channel slice {}..{} out of range for {} channels",
                start,
                start + count,
                c
            )));
        }
        let mut data = Vec::with_capacity(n * count * h * w);
        for b in 0..n {
            for ch in start..start + count {
                data.extend_from_slice(self.plane(b, ch));
            }
        }
        Ok(Tensor {
            dims: [n, count, h, w],
            data,
        })
    }

    pub(crate) fn expect_dims(&self, dims: Dims, what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!(
                "{what}: expected dims {:?}, got {:?}",
                dims, self.dims
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

/// Weights of a 2-D convolution (cross-correlation) with symmetric zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// `(out_c, in_c, kh, kw)`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        if bias.len() != weight.n() {
            return Err(Error::shape(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                weight.n()
            )));
        }
        if stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Zero weights, stride 1, "same" padding for odd `k`.
    pub fn zeros_same(out_c: usize, in_c: usize, k: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros([out_c, in_c, k, k]),
            bias: vec![0.0; out_c],
            stride: 1,
            padding: k / 2,
        }
    }

    /// Xavier-uniform weights (bound `√(6 / (fan_in + fan_out))`), zero bias, stride 1, same padding.
    pub fn xavier_same(out_c: usize, in_c: usize, k: usize, rng: &mut Rng) -> Self {
        let bound = xavier_bound(out_c, in_c, k, k);
        ConvParams {
            weight: Tensor::uniform([out_c, in_c, k, k], -bound, bound, rng),
            bias: vec![0.0; out_c],
            stride: 1,
            padding: k / 2,
        }
    }

    #[inline]
    pub fn out_c(&self) -> usize {
        self.weight.n()
    }

    #[inline]
    pub fn in_c(&self) -> usize {
        self.weight.c()
    }

    #[inline]
    pub fn kh(&self) -> usize {
        self.weight.h()
    }

    #[inline]
    pub fn kw(&self) -> usize {
        self.weight.w()
    }

    /// A bundle of the same shape with all weights and biases zeroed, used to hold gradients.
    pub fn zeros_like(&self) -> Self {
        ConvParams {
            weight: Tensor::zeros(self.weight.dims()),
            bias: vec![0.0; self.bias.len()],
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// `self += k · other` over weights and biases.
    pub fn axpy(&mut self, k: f64, other: &ConvParams) -> Result<()> {
        self.weight.axpy(k, &other.weight)?;
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn xavier_bound(out_c: usize, in_c: usize, kh: usize, kw: usize) -> f64 {
    let fan_in = (in_c * kh * kw) as f64;
    let fan_out = (out_c * kh * kw) as f64;
    (6.0 / (fan_in + fan_out)).sqrt()
}

/// Default PCG stream selector (the reference `PCG32_INITIALIZER` increment, halved).
pub const PCG_STREAM: u64 = 0x0a02_bdbf_7bb3_c0a7;

/// Deterministic PCG32 (XSH-RR, 64-bit state, 32-bit output) stream.
///
/// The generator is seeded as `Pcg32::new(seed, PCG_STREAM)`. Floats take 53 bits from
/// two consecutive 32-bit outputs (high word first), so draws are identical on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Pcg32,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Pcg32::new(seed, PCG_STREAM),
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        let bits = ((hi << 32) | lo) >> 11;
        bits as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, bound)`; `bound` must be non-zero.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        // Lemire's multiply-shift, with rejection to remove bias.
        let bound32 = bound as u32;
        let threshold = bound32.wrapping_neg() % bound32;
        loop {
            let m = self.next_u32() as u64 * bound32 as u64;
            if (m as u32) >= threshold {
                return (m >> 32) as usize;
            }
        }
    }
}
