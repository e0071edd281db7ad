//! Dense tensors and the numerical kernels every other module builds on.
//!
//! Feature maps are rank-4 `[batch, channels, height, width]`, row-major.
//! All kernels are pure functions of their inputs and deterministic: the
//! reduction order is fixed and nothing runs in parallel.

mod conv;
pub mod counter;
mod fft;
mod io;
mod norm;
mod ops;
mod resample;
mod spatial;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst};
use rand::Rng;

use crate::error::{invalid, shape_err, Result};

pub use conv::{conv2d, conv2d_backward_input, conv2d_backward_weight, ConvSpec};
pub use fft::{
    fft2_real, fft_macs, ifft2_real, irfft2, irfft2_adjoint, recombine, rfft2, rfft2_adjoint,
    ComplexHalf, Spectrum,
};
pub use io::{read_dkt1, read_tensor, write_dkt1, write_tensor};
pub use norm::{layer_norm, layer_norm_backward, LayerNormStats, LN_EPS};
pub use ops::{
    abs_sum, add, concat_channels, diff_x, diff_x_adjoint, diff_y, diff_y_adjoint,
    global_avg_pool, mul, mul_channel, narrow_channels, scale, sq_sum, sub,
};
pub use resample::{
    bilinear_resize, bilinear_resize_backward, pixel_shuffle, pixel_unshuffle,
};
pub use spatial::{crop, flip_h, flip_v, pad_reflect, rot90};

/// Floating-point element type. `f32` is the working precision, `f64` is
/// used for gradient verification.
pub trait Scalar:
    Float
    + FloatConst
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(invalid("tensor", format!("extents must be >= 1, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} elements but buffer has {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; for internal construction where the shape
    /// has already been validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "bad shape {shape:?}");
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    /// Uniform samples in `[lo, hi)`, drawn in 64-bit so both precisions see
    /// the same values for the same generator state.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::from_f64(rng.random_range(lo..hi)))
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `[n, c, h, w]` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err(
                "dims4",
                format!("expected rank 4, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len())
    }

    /// Extract sample `index` of a rank-4 batch as a batch of one.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4()?;
        if index >= n {
            return Err(invalid("batch_item", format!("index {index} >= batch {n}")));
        }
        let len = c * h * w;
        Ok(Self::from_parts(
            vec![1, c, h, w],
            self.data[index * len..(index + 1) * len].to_vec(),
        ))
    }

    /// Concatenate rank-4 tensors with identical `[c, h, w]` along the batch axis.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| invalid("stack_batch", "no tensors"))?;
        let [_, c, h, w] = first.dims4()?;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let [tn, tc, th, tw] = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(shape_err(
                    "stack_batch",
                    format!("item shape {:?} differs from {:?}", t.shape, first.shape),
                ));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Self::from_parts(vec![n, c, h, w], data))
    }
}

pub(crate) fn ensure_same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(shape_err(
            op,
            format!("lhs {:?} vs rhs {:?}", a.shape, b.shape),
        ));
    }
    Ok(())
}
