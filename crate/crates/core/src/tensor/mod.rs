//! Dense row-major `f32` tensors and the fixed set of differentiable ops the
//! detector needs.
//!
//! There is no dynamic autodiff graph. Every op that participates in training
//! has a forward function and a matching backward function; layers keep the
//! forward context they need and call the backward explicitly.

mod conv;
mod elementwise;
pub mod io;
mod reduce;
mod spatial;

pub use conv::{conv2d, conv2d_backward, conv2d_forward, ConvCtx, ConvGrads, ConvParams};
pub use elementwise::{
    add, add_backward, mul, mul_backward, mul_channel_broadcast, mul_channel_broadcast_backward,
    relu, relu_backward, scale, scale_backward, sigmoid, sigmoid_backward,
};
pub use reduce::{
    max_over_axis, mean_over_axis, mean_over_axis_backward, median_over_axis, select_backward,
    stack, sum, ArgIndex,
};
pub use spatial::{
    concat_channels, maxpool2x, maxpool2x_backward, split_channels, upsample2x_nearest,
    upsample2x_nearest_backward, PoolIndex,
};

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

pub const MAX_RANK: usize = 4;

/// Dense tensor of up to four positive extents with an optional gradient slot.
///
/// Activations follow the batch × channels × height × width layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        validate_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, len, data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// Panics on an invalid shape; shapes passed here are built by the
    /// crate itself, never parsed from input.
    pub fn full(shape: &[usize], value: f32) -> Self {
        validate_shape(shape).expect("invalid tensor shape");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    /// Gaussian draws with the given standard deviation.
    pub fn randn(shape: &[usize], std: f32, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| rng.normal() * std)
    }

    pub fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| rng.range(lo, hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Gradient slot, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot.
    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        if g.shape != self.shape {
            return Err(shape_err(
                "accumulate_grad",
                format!("{:?} vs {:?}", g.shape, self.shape),
            ));
        }
        self.grad_mut()
            .iter_mut()
            .zip(&g.data)
            .for_each(|(a, b)| *a += *b);
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    /// Extents of a rank-4 tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err(
                "dims4",
                format!("expected rank 4, got {:?}", self.shape),
            )),
        }
    }

    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + y) * ww + x]
    }

    pub fn set4(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let (cc, hh, ww) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + y) * ww + x] = v;
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn ensure_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Bitwise equality of shape and data (grad slots ignored).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() > MAX_RANK {
        return Err(shape_err(
            "shape",
            format!("rank {} exceeds {}", shape.len(), MAX_RANK),
        ));
    }
    if shape.contains(&0) {
        return Err(shape_err("shape", format!("zero extent in {:?}", shape)));
    }
    Ok(())
}
