//! Dense 4-D feature maps stored as flat row-major buffers.
//!
//! Layout is `(batch, channel, row, column)` with the column index moving
//! fastest. Parameters and activations are stored in `f32` on the production
//! path ([`FeatureMap`]); every numerical routine is also instantiated at
//! `f64` so gradient checks can run on a full 64-bit path. Reductions
//! (convolution sums, pooling norms, averages) always accumulate in `f64`
//! regardless of the storage type.

use crate::error::{Error, Result};

/// Storage scalar for feature maps and parameters: `f32` or `f64`.
pub trait Scalar:
    Copy + PartialOrd + PartialEq + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite_value(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

/// Dimensions of a 4-D feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Dims {
        Dims {
            batch,
            channels,
            height,
            width,
        }
    }

    /// Total number of elements.
    #[inline]
    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (channels x height x width).
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Flat index of `(b, c, y, x)`.
    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::ZeroDim(format!("{self:?}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// A dense 4-D array of `T` in `(batch, channel, row, column)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Dims,
    data: Vec<T>,
}

/// The production feature map type: 32-bit storage.
pub type FeatureMap = Tensor<f32>;

impl<T: Scalar> Tensor<T> {
    /// Zero-filled tensor.
    pub fn zeros(dims: Dims) -> Tensor<T> {
        Tensor {
            dims,
            data: vec![T::ZERO; dims.len()],
        }
    }

    /// Builds a tensor from a flat row-major buffer, validating the length,
    /// that no dimension is zero, and that every value is finite.
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Tensor<T>> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims: dims.to_string(),
                expected: dims.len(),
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite_value()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Tensor { dims, data })
    }

    /// Fills a tensor by calling `f(b, c, y, x)` for every element.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Tensor<T> {
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.batch {
            for c in 0..dims.channels {
                for y in 0..dims.height {
                    for x in 0..dims.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Value at `(b, c, y, x)`.
    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.dims.at(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.dims.at(b, c, y, x);
        self.data[i] = v;
    }

    /// The contiguous slice holding one sample.
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.dims.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.dims.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Copies a contiguous run of samples into a new tensor.
    pub fn batch_range(&self, start: usize, count: usize) -> Tensor<T> {
        let n = self.dims.sample_len();
        Tensor {
            dims: Dims {
                batch: count,
                ..self.dims
            },
            data: self.data[start * n..(start + count) * n].to_vec(),
        }
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite_value())
    }

    /// Converts storage precision, preserving values.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Builds a feature map from explicit dimensions and a flat value buffer.
pub fn feature_map_create(
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
) -> Result<FeatureMap> {
    Tensor::from_vec(Dims::new(batch, channels, height, width), data)
}

/// Binary elementwise operations over same-shaped tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Max,
}

/// Applies `op` elementwise. Shapes must match exactly; the result is
/// checked for finiteness (e.g. `Add` can overflow 32-bit storage).
pub fn map_elementwise<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: ElementwiseOp,
) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "elementwise {:?} on {} vs {}",
            op,
            a.dims(),
            b.dims()
        )));
    }
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match op {
            ElementwiseOp::Add => T::from_f64(x.to_f64() + y.to_f64()),
            ElementwiseOp::Mul => T::from_f64(x.to_f64() * y.to_f64()),
            ElementwiseOp::Max => {
                if y > x {
                    y
                } else {
                    x
                }
            }
        })
        .collect();
    if !data.iter().all(|v| v.is_finite_value()) {
        return Err(Error::NonFinite(format!("elementwise {op:?}")));
    }
    Ok(Tensor {
        dims: a.dims(),
        data,
    })
}
