//! Inverted dropout: units are zeroed during training with the given
//! probability and survivors are scaled by `1/(1-rate)`, so inference is
//! exactly the identity.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Applies dropout to `input`.
///
/// In training mode each element is independently zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; the returned mask holds
/// the factor applied to each element (0 or the scale). In inference mode
/// the input passes through unchanged and the mask is all ones. `rate`
/// must lie in `[0, 1)`.
pub fn dropout_forward<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) || !rate.is_finite() {
        return Err(Error::BadRate(format!("dropout rate {rate} outside [0, 1)")));
    }
    let n = input.dims().len();
    if !training || rate == 0.0 {
        return Ok((input.clone(), vec![T::ONE; n]));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut mask = Vec::with_capacity(n);
    for _ in 0..n {
        mask.push(if rng.next_f64() < rate {
            T::ZERO
        } else {
            T::from_f64(scale)
        });
    }
    let data: Vec<T> = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| T::from_f64(v.to_f64() * m.to_f64()))
        .collect();
    Ok((Tensor::from_vec(input.dims(), data)?, mask))
}

/// Backward pass: the upstream gradient times the recorded mask.
pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>> {
    if grad_out.dims().len() != mask.len() {
        return Err(Error::LengthMismatch {
            dims: "dropout mask".into(),
            expected: grad_out.dims().len(),
            got: mask.len(),
        });
    }
    let data: Vec<T> = grad_out
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &m)| T::from_f64(g.to_f64() * m.to_f64()))
        .collect();
    Tensor::from_vec(grad_out.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn input(n: usize) -> Tensor<f32> {
        Tensor::from_fn(Dims::new(1, 1, 1, n), |_, _, _, x| x as f32 * 0.01 + 1.0)
    }

    #[test]
    fn rate_zero_is_identity_in_both_modes() {
        let x = input(64);
        let mut rng = Rng::new(1);
        let (train, mask) = dropout_forward(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(train, x);
        assert!(mask.iter().all(|&m| m == 1.0));
        let (eval, _) = dropout_forward(&x, 0.0, &mut rng, false).unwrap();
        assert_eq!(eval, x);
    }

    #[test]
    fn inference_ignores_the_rate() {
        let x = input(64);
        let mut rng = Rng::new(1);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn survival_fraction_and_mean_are_preserved() {
        let n = 1_000_000;
        let x = Tensor::<f32>::from_fn(Dims::new(1, 1, 1, n), |_, _, _, _| 1.0);
        let mut rng = Rng::new(99);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let surviving = mask.iter().filter(|&&m| m != 0.0).count() as f64 / n as f64;
        assert!((surviving - 0.5).abs() < 0.01, "survival {surviving}");
        let mean: f64 = y.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn invalid_rates_are_rejected() {
        let x = input(4);
        let mut rng = Rng::new(1);
        assert!(matches!(dropout_forward(&x, 1.0, &mut rng, true), Err(Error::BadRate(_))));
        assert!(matches!(dropout_forward(&x, -0.1, &mut rng, true), Err(Error::BadRate(_))));
        assert!(matches!(dropout_forward(&x, f64::NAN, &mut rng, true), Err(Error::BadRate(_))));
    }

    #[test]
    fn backward_applies_the_same_mask() {
        let x = input(100);
        let mut rng = Rng::new(7);
        let (_, mask) = dropout_forward(&x, 0.3, &mut rng, true).unwrap();
        let g = Tensor::<f32>::from_fn(Dims::new(1, 1, 1, 100), |_, _, _, i| i as f32);
        let gin = dropout_backward(&g, &mask).unwrap();
        for i in 0..100 {
            assert_eq!(gin.data()[i], g.data()[i] * mask[i]);
        }
    }
}
