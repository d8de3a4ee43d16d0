//! Dense row-major tensors and the forward/backward kernels used by the
//! constrained VGG-style networks.
//!
//! Kernels are generic over [`Scalar`] so the same code runs in single
//! precision for training and inference and in double precision when
//! verifying gradients.

mod conv;
mod ops;

pub use conv::{conv2d, conv2d_backward, conv2d_counted, conv_output_extent};
pub use ops::{
    avgpool2x2, avgpool2x2_backward, dropout, dropout_backward, linear, linear_backward,
    linear_counted, maxpool2x2, maxpool2x2_backward, relu, relu_backward, softmax_xent,
    DropoutKey,
};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use thiserror::Error;

pub trait Scalar: Float + Default + Debug + Send + Sync + AddAssign + Sum + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("output extent is not exact: ({extent} + 2*{pad} - {kernel}) is not divisible by stride {stride}")]
    NonExactExtent {
        extent: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    },
    #[error("pooling needs even spatial extents, got {height}x{width}")]
    OddPoolExtent { height: usize, width: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense N-dimensional array stored contiguously in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type Tensor64 = Tensor<f64>;

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "tensor needs at least one dimension".into(),
        });
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(TensorError::InvalidShape {
                shape,
                reason: format!("data length {} does not match", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        })
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of everything after the leading (batch) dimension.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from(v).expect("finite scalar conversion"))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `[start, start + count)` along the leading dimension.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        let per = self.sample_len();
        if start + count > self.shape[0] || count == 0 {
            return Err(TensorError::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("batch slice {start}..{} out of range", start + count),
            });
        }
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Self {
            shape,
            data: self.data[start * per..(start + count) * per].to_vec(),
        })
    }

    /// Gathers samples along the leading dimension.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self> {
        let per = self.sample_len();
        if indices.is_empty() || indices.iter().any(|&i| i >= self.shape[0]) {
            return Err(TensorError::InvalidShape {
                shape: self.shape.clone(),
                reason: "batch selection out of range or empty".into(),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }

    pub fn sample(&self, index: usize) -> &[T] {
        let per = self.sample_len();
        &self.data[index * per..(index + 1) * per]
    }

    pub(crate) fn ensure_shape(&self, op: &'static str, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: expected.to_vec(),
                got: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(TensorError::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects a 4-d tensor"),
            }),
        }
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(TensorError::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects a 2-d tensor"),
            }),
        }
    }
}

/// Index of the largest value; ties go to the lowest index and NaNs are skipped.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    let mut best_value = T::neg_infinity();
    for (i, &v) in values.iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Multiply-accumulate counter threaded through the instrumented kernels.
pub trait MacSink {
    fn add(&mut self, macs: u64);
}

impl MacSink for () {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter(pub u64);

impl MacSink for MacCounter {
    #[inline(always)]
    fn add(&mut self, macs: u64) {
        self.0 += macs;
    }
}
