//! Softmax cross-entropy over `1x1`-spatial logits, with the gradient that
//! backs every training step: `(softmax - onehot) / batch`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_logits<T: Scalar>(logits: &Tensor<T>, labels: &[u16]) -> Result<()> {
    let d = logits.dims();
    if d.height != 1 || d.width != 1 {
        return Err(Error::ShapeMismatch(format!(
            "softmax expects 1x1 spatial logits, got {d}"
        )));
    }
    if labels.len() != d.batch {
        return Err(Error::LengthMismatch {
            dims: "labels per sample".into(),
            expected: d.batch,
            got: labels.len(),
        });
    }
    for &label in labels {
        if label as usize >= d.channels {
            return Err(Error::BadLabel {
                label: label as usize,
                classes: d.channels,
            });
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under the softmax of `logits`,
/// and its gradient with respect to the logits.
///
/// Probabilities are computed with the per-sample maximum subtracted (in
/// `f64`), so arbitrarily large logits stay finite. The loss is averaged
/// over the batch and the gradient is `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u16],
) -> Result<(f64, Tensor<T>)> {
    check_logits(logits, labels)?;
    let d = logits.dims();
    let classes = d.channels;
    let batch = d.batch;
    let mut grad = Tensor::<T>::zeros(d);
    let mut loss = 0.0f64;
    let inv_batch = 1.0 / batch as f64;
    let mut probs = vec![0.0f64; classes];
    for b in 0..batch {
        let row = logits.sample(b);
        let mut peak = f64::NEG_INFINITY;
        for &v in row {
            peak = peak.max(v.to_f64());
        }
        let mut denom = 0.0f64;
        for (p, &v) in probs.iter_mut().zip(row) {
            *p = (v.to_f64() - peak).exp();
            denom += *p;
        }
        let label = labels[b] as usize;
        // -log softmax[label] = log(denom) - (logit[label] - peak)
        loss += denom.ln() - (row[label].to_f64() - peak);
        let grow = grad.sample_mut(b);
        for (c, g) in grow.iter_mut().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            *g = T::from_f64((probs[c] / denom - onehot) * inv_batch);
        }
    }
    Ok((loss * inv_batch, grad))
}

/// Argmax class index per sample; ties break toward the lower index.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let d = logits.dims();
    if d.height != 1 || d.width != 1 {
        return Err(Error::ShapeMismatch(format!(
            "argmax expects 1x1 spatial logits, got {d}"
        )));
    }
    Ok((0..d.batch)
        .map(|b| {
            let row = logits.sample(b);
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v.to_f64() > row[best].to_f64() {
                    best = c;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn uniform_logits_give_log_of_class_count() {
        let logits = Tensor::<f32>::from_fn(Dims::new(4, 10, 1, 1), |_, _, _, _| 0.37);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 3, 5, 9]).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-6, "loss {loss}");
        // Gradient at the true class: (0.1 - 1)/4; elsewhere 0.1/4.
        assert!((grad.at(0, 0, 0, 0) as f64 + 0.225).abs() < 1e-6);
        assert!((grad.at(0, 1, 0, 0) as f64 - 0.025).abs() < 1e-6);
    }

    #[test]
    fn saturated_true_logit_drives_loss_to_zero() {
        let mut logits = Tensor::<f32>::zeros(Dims::new(1, 10, 1, 1));
        logits.set(0, 3, 0, 0, 1000.0);
        let (loss, _) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let mut logits = Tensor::<f32>::zeros(Dims::new(1, 3, 1, 1));
        logits.set(0, 0, 0, 0, 30000.0);
        logits.set(0, 1, 0, 0, -30000.0);
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.all_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Tensor::<f64>::from_vec(
            Dims::new(2, 4, 1, 1),
            vec![0.3, -1.2, 0.7, 0.1, 2.0, 0.0, -0.5, 1.1],
        )
        .unwrap();
        let labels = [2u16, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let eps = 1e-6;
        for idx in 0..8 {
            let mut lo = logits.clone();
            let mut hi = logits.clone();
            lo.data_mut()[idx] -= eps;
            hi.data_mut()[idx] += eps;
            let (l_lo, _) = softmax_cross_entropy(&lo, &labels).unwrap();
            let (l_hi, _) = softmax_cross_entropy(&hi, &labels).unwrap();
            let fd = (l_hi - l_lo) / (2.0 * eps);
            assert!(
                (fd - grad.data()[idx]).abs() < 1e-4 * fd.abs().max(1.0),
                "logit {idx}: {} vs {fd}",
                grad.data()[idx]
            );
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::<f64>::from_vec(
            Dims::new(1, 5, 1, 1),
            vec![0.1, 0.9, -0.4, 2.2, -1.0],
        )
        .unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[4]).unwrap();
        let sum: f64 = grad.data().iter().sum();
        assert!(sum.abs() < 1e-15);
    }

    #[test]
    fn bad_label_is_rejected() {
        let logits = Tensor::<f32>::zeros(Dims::new(1, 10, 1, 1));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[10]),
            Err(Error::BadLabel { label: 10, classes: 10 })
        ));
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let logits = Tensor::<f32>::zeros(Dims::new(2, 10, 1, 1));
        assert!(softmax_cross_entropy(&logits, &[1]).is_err());
    }

    #[test]
    fn spatial_logits_are_rejected() {
        let logits = Tensor::<f32>::zeros(Dims::new(1, 10, 2, 2));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn argmax_picks_the_largest_logit() {
        let logits = Tensor::<f32>::from_vec(
            Dims::new(2, 3, 1, 1),
            vec![0.1, 0.9, -0.4, 5.0, 5.0, 4.0],
        )
        .unwrap();
        assert_eq!(argmax_classes(&logits).unwrap(), vec![1, 0]);
    }
}
