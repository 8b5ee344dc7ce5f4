//! Helpers shared by the integration suites.
#![allow(dead_code)]

use allconv::layers::Mode;
use allconv::model::Model;
use allconv::rng::Rng;
use allconv::tensor::Tensor;

/// Mean loss of an `f64` model on a fixed batch. `seed` feeds the
/// forward-pass generator, so train-mode dropout masks are repeatable.
pub fn loss_of(
    model: &Model<f64>,
    images: &Tensor<f64>,
    labels: &[u16],
    mode: Mode,
    seed: u64,
) -> f64 {
    let trace = model
        .forward(images, mode, &Rng::new(seed))
        .expect("forward");
    let (loss, _) = model.loss_and_grads(&trace, labels).expect("loss");
    loss
}

/// Central finite difference of the loss with respect to one weight.
pub fn fd_weight(
    model: &mut Model<f64>,
    images: &Tensor<f64>,
    labels: &[u16],
    mode: Mode,
    seed: u64,
    group: usize,
    index: usize,
    eps: f64,
) -> f64 {
    let orig = model.params[group].weights[index];
    model.params[group].weights[index] = orig + eps;
    let up = loss_of(model, images, labels, mode, seed);
    model.params[group].weights[index] = orig - eps;
    let down = loss_of(model, images, labels, mode, seed);
    model.params[group].weights[index] = orig;
    (up - down) / (2.0 * eps)
}

/// Central finite difference of the loss with respect to one bias.
pub fn fd_bias(
    model: &mut Model<f64>,
    images: &Tensor<f64>,
    labels: &[u16],
    mode: Mode,
    seed: u64,
    group: usize,
    index: usize,
    eps: f64,
) -> f64 {
    let orig = model.params[group].bias[index];
    model.params[group].bias[index] = orig + eps;
    let up = loss_of(model, images, labels, mode, seed);
    model.params[group].bias[index] = orig - eps;
    let down = loss_of(model, images, labels, mode, seed);
    model.params[group].bias[index] = orig;
    (up - down) / (2.0 * eps)
}

/// Relative error between an analytic and a numeric derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// An image parsed by the reference reader below.
pub struct PnmImage {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major, channel-interleaved samples.
    pub raster: Vec<u8>,
}

/// Minimal independent binary PPM/PGM (P6/P5, maxval 255) reader, written
/// directly from the format description and sharing no code with the
/// library's own parser: magic, then three whitespace-separated decimal
/// integers (with `#` comments allowed), one whitespace byte, then
/// width*height*(channels) raw samples.
pub fn reference_read_pnm(bytes: &[u8]) -> Result<PnmImage, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("bad magic".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == start {
            return Err("missing header integer".into());
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = text.parse().map_err(|e| format!("header: {e}"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("missing separator after header".into());
    }
    pos += 1;
    let need = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() != need {
        return Err(format!("raster is {} bytes, need {need}", raster.len()));
    }
    Ok(PnmImage {
        channels,
        width,
        height,
        raster: raster.to_vec(),
    })
}
