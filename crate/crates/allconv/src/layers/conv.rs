//! 2-D convolution via im2col and double-precision GEMM.
//!
//! Each sample's window patches are flattened into a `(positions x N*k*k)`
//! matrix of `f64`, multiplied against the weight matrix, and written back
//! with bias and activation applied. Backward reuses the same patch matrix
//! for the weight gradient and scatters the data gradient back through
//! `col2im`. Samples are processed in fixed-size chunks whose partial weight
//! gradients are reduced in chunk order, so results are bit-identical for
//! any worker-thread count.

use rayon::prelude::*;

use super::ConvParams;
use crate::error::{Error, Result};
use crate::linalg::{dgemm, Op};
use crate::tensor::{Dims, Scalar, Tensor};

/// Samples per parallel work unit. Fixed (not derived from the thread
/// count) so gradient reduction order never changes.
const CHUNK: usize = 16;

/// Gradients returned by the convolution backward pass.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// Gradient with respect to the layer input.
    pub input: Tensor<T>,
    /// Gradient with respect to the weights, same layout as
    /// [`ConvParams::weights`].
    pub weights: Vec<T>,
    /// Gradient with respect to the biases.
    pub bias: Vec<T>,
}

/// Flattens one sample's windows into `col` (`oh*ow` rows, `n*k*k` columns),
/// substituting zero for padded coordinates.
fn im2col<T: Scalar>(
    src: &[T],
    n: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    let cols = n * k * k;
    debug_assert_eq!(src.len(), n * h * w);
    debug_assert_eq!(col.len(), oh * ow * cols);
    for i in 0..oh {
        for j in 0..ow {
            let row = (i * ow + j) * cols;
            for u in 0..n {
                let plane = &src[u * h * w..(u + 1) * h * w];
                for ky in 0..k {
                    let y = (i * stride + ky) as isize - pad as isize;
                    let base = row + (u * k + ky) * k;
                    if y < 0 || y >= h as isize {
                        col[base..base + k].fill(0.0);
                        continue;
                    }
                    let yrow = &plane[y as usize * w..(y as usize + 1) * w];
                    for kx in 0..k {
                        let x = (j * stride + kx) as isize - pad as isize;
                        col[base + kx] = if x < 0 || x >= w as isize {
                            0.0
                        } else {
                            yrow[x as usize].to_f64()
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-gradient matrix back onto one sample's input
/// gradient; contributions from overlapping windows sum, padded
/// coordinates are dropped.
fn col2im(
    gcol: &[f64],
    n: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dst: &mut [f64],
) {
    let cols = n * k * k;
    debug_assert_eq!(gcol.len(), oh * ow * cols);
    debug_assert_eq!(dst.len(), n * h * w);
    for i in 0..oh {
        for j in 0..ow {
            let row = (i * ow + j) * cols;
            for u in 0..n {
                for ky in 0..k {
                    let y = (i * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let base = row + (u * k + ky) * k;
                    let drow = (u * h + y as usize) * w;
                    for kx in 0..k {
                        let x = (j * stride + kx) as isize - pad as isize;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        dst[drow + x as usize] += gcol[base + kx];
                    }
                }
            }
        }
    }
}

fn to_f64_vec<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

/// Convolves `input` with `params`, adds bias, applies the activation.
///
/// Output position `(i, j)` reads the input window whose top-left corner is
/// `(i*stride - padding, j*stride - padding)`; coordinates outside the input
/// contribute zero.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let params = params.checked()?;
    let d = input.dims();
    if d.channels != params.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "convolution expects {} input channels, got {}",
            params.in_channels, d.channels
        )));
    }
    let (oh, ow) = params.output_hw(d.height, d.width)?;
    let od = Dims::new(d.batch, params.out_channels, oh, ow);

    let w64 = to_f64_vec(&params.weights);
    let b64 = to_f64_vec(&params.bias);
    let kdim = params.in_channels * params.kernel * params.kernel;
    let positions = oh * ow;
    let m = params.out_channels;
    let out_len = od.sample_len();
    let act = params.activation;

    let mut out = Tensor::<T>::zeros(od);
    out.data_mut()
        .par_chunks_mut(CHUNK * out_len)
        .enumerate()
        .try_for_each(|(ci, out_chunk)| -> Result<()> {
            let mut col = vec![0.0f64; positions * kdim];
            let mut acc = vec![0.0f64; m * positions];
            for (s, out_s) in out_chunk.chunks_mut(out_len).enumerate() {
                let src = input.sample(ci * CHUNK + s);
                im2col(
                    src,
                    params.in_channels,
                    d.height,
                    d.width,
                    params.kernel,
                    params.stride,
                    params.padding,
                    oh,
                    ow,
                    &mut col,
                );
                dgemm(m, kdim, positions, 1.0, &w64, Op::NoTrans, &col, Op::Trans, 0.0, &mut acc)?;
                for o in 0..m {
                    let bias = b64[o];
                    let dst = &mut out_s[o * positions..(o + 1) * positions];
                    let src = &acc[o * positions..(o + 1) * positions];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = T::from_f64(act.apply(v + bias));
                    }
                }
            }
            Ok(())
        })?;

    if !out.all_finite() {
        return Err(Error::NonFinite("convolution output".into()));
    }
    Ok(out)
}

/// Full backward pass that recomputes the forward activations internally.
///
/// Prefer [`conv2d_backward_cached`] when the forward output is already
/// available (the model keeps it for exactly this purpose).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let output = conv2d_forward(input, params)?;
    conv2d_backward_cached(input, &output, params, grad_out)
}

/// Exact chain-rule gradients of the convolution layer.
///
/// `output` must be the forward result for `input` under `params`; the
/// activation derivative is recovered from it. Returns gradients with
/// respect to the input, the weights, and the biases.
pub fn conv2d_backward_cached<T: Scalar>(
    input: &Tensor<T>,
    output: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let params = params.checked()?;
    let d = input.dims();
    if d.channels != params.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "convolution expects {} input channels, got {}",
            params.in_channels, d.channels
        )));
    }
    let (oh, ow) = params.output_hw(d.height, d.width)?;
    let od = Dims::new(d.batch, params.out_channels, oh, ow);
    if grad_out.dims() != od || output.dims() != od {
        return Err(Error::ShapeMismatch(format!(
            "convolution backward expects {od}, got grad {} / output {}",
            grad_out.dims(),
            output.dims()
        )));
    }

    let w64 = to_f64_vec(&params.weights);
    let kdim = params.in_channels * params.kernel * params.kernel;
    let positions = oh * ow;
    let m = params.out_channels;
    let in_len = d.sample_len();
    let act = params.activation;

    let mut grad_input = Tensor::<T>::zeros(d);
    let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = grad_input
        .data_mut()
        .par_chunks_mut(CHUNK * in_len)
        .enumerate()
        .map(|(ci, gin_chunk)| {
            let mut col = vec![0.0f64; positions * kdim];
            let mut gpre = vec![0.0f64; m * positions];
            let mut gcol = vec![0.0f64; positions * kdim];
            let mut gin = vec![0.0f64; in_len];
            let mut wpart = vec![0.0f64; m * kdim];
            let mut bpart = vec![0.0f64; m];
            for (s, gin_s) in gin_chunk.chunks_mut(in_len).enumerate() {
                let b = ci * CHUNK + s;
                let out_s = output.sample(b);
                let go_s = grad_out.sample(b);
                for (g, (&o, &r)) in gpre.iter_mut().zip(out_s.iter().zip(go_s)) {
                    *g = r.to_f64() * act.grad_from_output(o.to_f64());
                }
                for o in 0..m {
                    let mut sum = 0.0;
                    for &v in &gpre[o * positions..(o + 1) * positions] {
                        sum += v;
                    }
                    bpart[o] += sum;
                }
                im2col(
                    input.sample(b),
                    params.in_channels,
                    d.height,
                    d.width,
                    params.kernel,
                    params.stride,
                    params.padding,
                    oh,
                    ow,
                    &mut col,
                );
                // dW += gpre (M x P) * col (P x K)
                dgemm(m, positions, kdim, 1.0, &gpre, Op::NoTrans, &col, Op::NoTrans, 1.0, &mut wpart)?;
                // dCol = gpre^T (P x M) * W (M x K)
                dgemm(positions, m, kdim, 1.0, &gpre, Op::Trans, &w64, Op::NoTrans, 0.0, &mut gcol)?;
                gin.fill(0.0);
                col2im(
                    &gcol,
                    params.in_channels,
                    d.height,
                    d.width,
                    params.kernel,
                    params.stride,
                    params.padding,
                    oh,
                    ow,
                    &mut gin,
                );
                for (dst, &v) in gin_s.iter_mut().zip(&gin) {
                    *dst = T::from_f64(v);
                }
            }
            Ok((wpart, bpart))
        })
        .collect();

    let mut gw = vec![0.0f64; m * kdim];
    let mut gb = vec![0.0f64; m];
    for partial in partials {
        let (wpart, bpart) = partial?;
        for (acc, v) in gw.iter_mut().zip(wpart) {
            *acc += v;
        }
        for (acc, v) in gb.iter_mut().zip(bpart) {
            *acc += v;
        }
    }

    let weights: Vec<T> = gw.into_iter().map(T::from_f64).collect();
    let bias: Vec<T> = gb.into_iter().map(T::from_f64).collect();
    if !grad_input.all_finite()
        || !weights.iter().all(|v| v.is_finite_value())
        || !bias.iter().all(|v| v.is_finite_value())
    {
        return Err(Error::NonFinite("convolution gradients".into()));
    }
    Ok(ConvGrads {
        input: grad_input,
        weights,
        bias,
    })
}

/// Propagates a gradient given with respect to the *pre-activation* sums
/// back to the layer input: the pure linear transpose of the convolution
/// (no activation derivative, no bias). Used by the feature-visualization
/// backward rules, which handle the nonlinearity themselves.
pub fn conv2d_backward_data<T: Scalar>(
    params: &ConvParams<T>,
    grad_pre: &Tensor<T>,
    input_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let params = params.checked()?;
    let (h, w) = input_hw;
    let (oh, ow) = params.output_hw(h, w)?;
    let gd = grad_pre.dims();
    if gd.channels != params.out_channels || gd.height != oh || gd.width != ow {
        return Err(Error::ShapeMismatch(format!(
            "pre-activation gradient {gd} does not match {}x{oh}x{ow}",
            params.out_channels
        )));
    }
    let d = Dims::new(gd.batch, params.in_channels, h, w);
    let w64 = to_f64_vec(&params.weights);
    let kdim = params.in_channels * params.kernel * params.kernel;
    let positions = oh * ow;
    let m = params.out_channels;
    let in_len = d.sample_len();

    let mut grad_input = Tensor::<T>::zeros(d);
    grad_input
        .data_mut()
        .par_chunks_mut(CHUNK * in_len)
        .enumerate()
        .try_for_each(|(ci, gin_chunk)| -> Result<()> {
            let mut gcol = vec![0.0f64; positions * kdim];
            let mut gin = vec![0.0f64; in_len];
            for (s, gin_s) in gin_chunk.chunks_mut(in_len).enumerate() {
                let gpre = to_f64_vec(grad_pre.sample(ci * CHUNK + s));
                dgemm(positions, m, kdim, 1.0, &gpre, Op::Trans, &w64, Op::NoTrans, 0.0, &mut gcol)?;
                gin.fill(0.0);
                col2im(
                    &gcol,
                    params.in_channels,
                    h,
                    w,
                    params.kernel,
                    params.stride,
                    params.padding,
                    oh,
                    ow,
                    &mut gin,
                );
                for (dst, &v) in gin_s.iter_mut().zip(&gin) {
                    *dst = T::from_f64(v);
                }
            }
            Ok(())
        })?;
    Ok(grad_input)
}
