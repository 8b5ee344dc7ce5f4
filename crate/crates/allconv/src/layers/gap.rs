//! Global average pooling: each channel collapses to the arithmetic mean of
//! all its spatial positions, producing a `1x1` map per channel.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Averages every channel over its full spatial extent (`f64` accumulation).
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let d = input.dims();
    let plane = (d.height * d.width) as f64;
    Tensor::from_fn(Dims::new(d.batch, d.channels, 1, 1), |b, c, _, _| {
        let mut sum = 0.0f64;
        for y in 0..d.height {
            for x in 0..d.width {
                sum += input.at(b, c, y, x).to_f64();
            }
        }
        T::from_f64(sum / plane)
    })
}

/// Backward pass: the upstream `1x1` gradient is spread uniformly, scaled
/// by `1/(H*W)`.
pub fn global_avg_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_dims: Dims,
) -> Result<Tensor<T>> {
    let gd = grad_out.dims();
    if gd.height != 1 || gd.width != 1 || gd.batch != input_dims.batch || gd.channels != input_dims.channels {
        return Err(Error::ShapeMismatch(format!(
            "global average backward: grad {gd} vs input {input_dims}"
        )));
    }
    let scale = 1.0 / (input_dims.height * input_dims.width) as f64;
    Ok(Tensor::from_fn(input_dims, |b, c, _, _| {
        T::from_f64(grad_out.at(b, c, 0, 0).to_f64() * scale)
    }))
}
