//! Spatial pooling: signed max pooling with argmax switches, the general
//! p-norm pooling family, and the two backward routings (switch scatter and
//! uniform window spread).
//!
//! Padding is chosen by kernel size — odd kernels pad `(k-1)/2` per side,
//! even kernels pad nothing — and padded cells are ignored rather than
//! treated as values (conceptually `-inf` for max, `0` for p-norms), so
//! border statistics are never biased by synthetic zeros.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Implicit padding per side for a pooling kernel: `(k-1)/2` for odd `k`
/// (size-preserving at stride 1), `0` for even `k`.
pub fn pool_padding(k: usize) -> usize {
    if k % 2 == 1 {
        (k - 1) / 2
    } else {
        0
    }
}

/// Argmax positions recorded by [`maxpool_forward`]: for every output cell,
/// the flat `y * width + x` coordinate of the input cell that attained the
/// window maximum. Coordinates always lie inside the real (unpadded) input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Switches {
    pub input_dims: Dims,
    pub output_dims: Dims,
    /// One entry per output element, in `(batch, channel, row, column)`
    /// order; each value indexes the sample's channel plane.
    pub index: Vec<u32>,
}

fn pooled_output_dims(d: Dims, k: usize, r: usize) -> Result<(Dims, usize)> {
    if k == 0 || r == 0 {
        return Err(Error::ZeroDim("pooling kernel or stride".into()));
    }
    let pad = pool_padding(k);
    let len = |n: usize| -> Result<usize> {
        let padded = n + 2 * pad;
        if padded < k {
            return Err(Error::EmptyOutput(format!(
                "pooling kernel {k} exceeds padded extent {padded}"
            )));
        }
        Ok((padded - k) / r + 1)
    };
    let oh = len(d.height)?;
    let ow = len(d.width)?;
    Ok((Dims::new(d.batch, d.channels, oh, ow), pad))
}

/// Iterates the valid (in-bounds) cells of one pooling window.
#[inline]
fn window_bounds(i: usize, r: usize, k: usize, pad: usize, limit: usize) -> (usize, usize) {
    let start = (i * r) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + k as isize) as usize).min(limit);
    (lo, hi)
}

/// Signed max pooling. Returns the pooled map and the argmax switches;
/// ties break toward the lowest row, then the lowest column.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    k: usize,
    r: usize,
) -> Result<(Tensor<T>, Switches)> {
    let d = input.dims();
    let (od, pad) = pooled_output_dims(d, k, r)?;
    let mut out = Tensor::<T>::zeros(od);
    let mut index = vec![0u32; od.len()];
    for b in 0..d.batch {
        for c in 0..d.channels {
            for i in 0..od.height {
                let (y0, y1) = window_bounds(i, r, k, pad, d.height);
                for j in 0..od.width {
                    let (x0, x1) = window_bounds(j, r, k, pad, d.width);
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0u32;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let v = input.at(b, c, y, x).to_f64();
                            if v > best {
                                best = v;
                                best_at = (y * d.width + x) as u32;
                            }
                        }
                    }
                    out.set(b, c, i, j, T::from_f64(best));
                    index[od.at(b, c, i, j)] = best_at;
                }
            }
        }
    }
    Ok((
        out,
        Switches {
            input_dims: d,
            output_dims: od,
            index,
        },
    ))
}

/// Routes each upstream gradient entry to its recorded argmax coordinate;
/// overlapping windows accumulate.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    switches: &Switches,
    input_dims: Dims,
) -> Result<Tensor<T>> {
    if grad_out.dims() != switches.output_dims || input_dims != switches.input_dims {
        return Err(Error::ShapeMismatch(format!(
            "pooling backward: grad {} vs recorded {}, input {} vs recorded {}",
            grad_out.dims(),
            switches.output_dims,
            input_dims,
            switches.input_dims
        )));
    }
    let od = switches.output_dims;
    let plane = input_dims.height * input_dims.width;
    let mut acc = vec![0.0f64; input_dims.len()];
    for b in 0..od.batch {
        for c in 0..od.channels {
            let base = (b * input_dims.channels + c) * plane;
            for i in 0..od.height {
                for j in 0..od.width {
                    let flat = od.at(b, c, i, j);
                    acc[base + switches.index[flat] as usize] += grad_out.data()[flat].to_f64();
                }
            }
        }
    }
    Tensor::from_vec(input_dims, acc.into_iter().map(T::from_f64).collect())
}

/// Switch-free pooling inversion: spreads each upstream entry uniformly
/// over its window's valid cells. Used by feature visualization when no
/// argmax record is available.
pub fn uniform_unpool<T: Scalar>(
    grad_out: &Tensor<T>,
    input_dims: Dims,
    k: usize,
    r: usize,
) -> Result<Tensor<T>> {
    let (od, pad) = pooled_output_dims(input_dims, k, r)?;
    if grad_out.dims() != od {
        return Err(Error::ShapeMismatch(format!(
            "uniform unpool: grad {} vs expected {od}",
            grad_out.dims()
        )));
    }
    let mut acc = vec![0.0f64; input_dims.len()];
    let plane = input_dims.height * input_dims.width;
    for b in 0..od.batch {
        for c in 0..od.channels {
            let base = (b * input_dims.channels + c) * plane;
            for i in 0..od.height {
                let (y0, y1) = window_bounds(i, r, k, pad, input_dims.height);
                for j in 0..od.width {
                    let (x0, x1) = window_bounds(j, r, k, pad, input_dims.width);
                    let count = ((y1 - y0) * (x1 - x0)) as f64;
                    let share = grad_out.at(b, c, i, j).to_f64() / count;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc[base + y * input_dims.width + x] += share;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(input_dims, acc.into_iter().map(T::from_f64).collect())
}

/// p-norm pooling: each output is `(sum over window of |f|^p)^(1/p)`.
///
/// `p` must be positive; `p = f64::INFINITY` returns the window maximum of
/// `|f|`. Channels are preserved. Sums are computed in `f64` with the
/// window maximum factored out, so large `p` stays finite.
pub fn pnorm_pool_forward<T: Scalar>(
    input: &Tensor<T>,
    k: usize,
    r: usize,
    p: f64,
) -> Result<Tensor<T>> {
    if !(p > 0.0) {
        return Err(Error::Config(format!(
            "p-norm order must be positive (or infinite), got {p}"
        )));
    }
    let d = input.dims();
    let (od, pad) = pooled_output_dims(d, k, r)?;
    let mut out = Tensor::<T>::zeros(od);
    for b in 0..d.batch {
        for c in 0..d.channels {
            for i in 0..od.height {
                let (y0, y1) = window_bounds(i, r, k, pad, d.height);
                for j in 0..od.width {
                    let (x0, x1) = window_bounds(j, r, k, pad, d.width);
                    let mut peak = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            peak = peak.max(input.at(b, c, y, x).to_f64().abs());
                        }
                    }
                    let value = if p.is_infinite() || peak == 0.0 {
                        peak
                    } else if p == 1.0 {
                        let mut sum = 0.0f64;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                sum += input.at(b, c, y, x).to_f64().abs();
                            }
                        }
                        sum
                    } else {
                        let mut sum = 0.0f64;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                sum += (input.at(b, c, y, x).to_f64().abs() / peak).powf(p);
                            }
                        }
                        peak * sum.powf(1.0 / p)
                    };
                    out.set(b, c, i, j, T::from_f64(value));
                }
            }
        }
    }
    Ok(out)
}
