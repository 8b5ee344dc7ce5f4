//! Forward and backward computations for every layer kind used by the
//! architectures in [`crate::model`]: convolution, max/p-norm pooling,
//! dropout, global average pooling and softmax cross-entropy.
//!
//! All reductions accumulate in `f64` regardless of the storage scalar, and
//! every operation is a pure function of its inputs (plus an explicit
//! [`crate::Rng`] where randomness is involved), so results are identical
//! for any worker-thread count.

mod conv;
mod dropout;
mod gap;
mod pool;
mod softmax;

pub use conv::{conv2d_backward, conv2d_backward_cached, conv2d_backward_data, conv2d_forward, ConvGrads};
pub use dropout::{dropout_backward, dropout_forward};
pub use gap::{global_avg_pool, global_avg_pool_backward};
pub use pool::{
    maxpool_backward, maxpool_forward, pnorm_pool_forward, pool_padding, uniform_unpool, Switches,
};
pub use softmax::{argmax_classes, softmax_cross_entropy};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Default negative-side slope for [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 1.0 / 3.0;

/// Pointwise nonlinearity fused into each convolution layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    /// Applies the nonlinearity to a pre-activation value.
    #[inline]
    pub fn apply(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => pre,
            Activation::Relu => {
                if pre > 0.0 {
                    pre
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if pre > 0.0 {
                    pre
                } else {
                    slope * pre
                }
            }
        }
    }

    /// Derivative of the nonlinearity, recovered from the *post*-activation
    /// value. All supported activations preserve the sign of their input
    /// (with positive leaky slopes), so the output alone determines which
    /// branch was taken.
    #[inline]
    pub fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if out > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters of one convolution layer.
///
/// Weights are stored row-major as `(out_channel, in_channel, ky, kx)`;
/// biases have one entry per output channel. Kernels are square.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Zero-initialized parameters with validated shape metadata.
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Result<ConvParams<T>> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::ZeroDim("convolution channel or kernel".into()));
        }
        if stride == 0 {
            return Err(Error::ZeroDim("convolution stride".into()));
        }
        Ok(ConvParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            activation,
            weights: vec![T::ZERO; out_channels * in_channels * kernel * kernel],
            bias: vec![T::ZERO; out_channels],
        })
    }

    /// Gaussian fan-in initialization: zero-mean, `std = sqrt(2 / (N*k^2))`,
    /// biases zero. Keeps deep stride-2 stacks trainable from the start.
    pub fn init_gaussian(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<ConvParams<T>> {
        let mut p = Self::zeros(in_channels, out_channels, kernel, stride, padding, activation)?;
        let std = (2.0 / (in_channels * kernel * kernel) as f64).sqrt();
        for w in p.weights.iter_mut() {
            *w = T::from_f64(rng.next_gaussian() * std);
        }
        Ok(p)
    }

    /// Number of weight entries (`M*N*k*k`).
    #[inline]
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Weights plus biases.
    #[inline]
    pub fn parameter_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    /// Flat index of weight `(o, u, ky, kx)`.
    #[inline]
    pub fn w_at(&self, o: usize, u: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + u) * self.kernel + ky) * self.kernel + kx
    }

    /// Spatial output size for an `h x w` input:
    /// `floor((len + 2*padding - kernel) / stride) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |len: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            if padded < self.kernel {
                return Err(Error::EmptyOutput(format!(
                    "kernel {} exceeds padded extent {padded}",
                    self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((out(h)?, out(w)?))
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.weight_count() {
            return Err(Error::LengthMismatch {
                dims: "convolution weights".into(),
                expected: self.weight_count(),
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::LengthMismatch {
                dims: "convolution bias".into(),
                expected: self.out_channels,
                got: self.bias.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn checked(&self) -> Result<&Self> {
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values_and_derivatives() {
        assert_eq!(Activation::Relu.apply(2.5), 2.5);
        assert_eq!(Activation::Relu.apply(-2.5), 0.0);
        assert_eq!(Activation::Identity.apply(-2.5), -2.5);
        let leaky = Activation::LeakyRelu { slope: LEAKY_SLOPE };
        assert_eq!(leaky.apply(-3.0), -1.0);
        assert_eq!(leaky.apply(3.0), 3.0);

        assert_eq!(Activation::Relu.grad_from_output(5.0), 1.0);
        assert_eq!(Activation::Relu.grad_from_output(0.0), 0.0);
        assert_eq!(leaky.grad_from_output(-1.0), LEAKY_SLOPE);
        assert_eq!(Activation::Identity.grad_from_output(-7.0), 1.0);
    }

    #[test]
    fn output_size_arithmetic() {
        let p = ConvParams::<f32>::zeros(3, 8, 3, 2, 1, Activation::Relu).unwrap();
        assert_eq!(p.output_hw(32, 32).unwrap(), (16, 16));
        let p = ConvParams::<f32>::zeros(3, 8, 3, 1, 0, Activation::Relu).unwrap();
        assert_eq!(p.output_hw(8, 8).unwrap(), (6, 6));
        let p = ConvParams::<f32>::zeros(3, 8, 11, 4, 2, Activation::Relu).unwrap();
        assert_eq!(p.output_hw(224, 224).unwrap(), (55, 55));
        let p = ConvParams::<f32>::zeros(3, 8, 5, 1, 0, Activation::Relu).unwrap();
        assert!(matches!(p.output_hw(4, 4), Err(Error::EmptyOutput(_))));
    }

    #[test]
    fn parameter_count_includes_bias() {
        let p = ConvParams::<f32>::zeros(192, 10, 1, 1, 0, Activation::Identity).unwrap();
        assert_eq!(p.parameter_count(), 1930);
    }

    #[test]
    fn gaussian_init_is_seed_deterministic() {
        let mut r1 = Rng::new(7);
        let mut r2 = Rng::new(7);
        let a = ConvParams::<f32>::init_gaussian(3, 8, 3, 1, 1, Activation::Relu, &mut r1).unwrap();
        let b = ConvParams::<f32>::init_gaussian(3, 8, 3, 1, 1, Activation::Relu, &mut r2).unwrap();
        assert_eq!(a.weights, b.weights);
        assert!(a.bias.iter().all(|&v| v == 0.0));
        // Sample standard deviation should sit near sqrt(2/27).
        let n = a.weights.len() as f64;
        let var: f64 = a.weights.iter().map(|w| (w.to_f64()).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / 27.0;
        assert!((var - expect).abs() < expect * 0.5, "var {var} vs {expect}");
    }
}
