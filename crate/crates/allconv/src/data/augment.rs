//! Training-time augmentation: random horizontal flips and integer
//! translations with zero-filled borders.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{FeatureMap, Tensor};

/// Maximum translation, in pixels, along each axis.
pub const MAX_SHIFT: i64 = 5;

/// One drawn augmentation: flip first, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Horizontal shift: content moves right by `dx` (`out(x) = in(x-dx)`).
    pub dx: i64,
    /// Vertical shift: content moves down by `dy`.
    pub dy: i64,
}

impl AugmentParams {
    /// Identity transform.
    pub const NONE: AugmentParams = AugmentParams {
        flip: false,
        dx: 0,
        dy: 0,
    };

    /// Draws a flip with probability 1/2 and shifts uniform on
    /// `[-max_shift, max_shift]` per axis (three draws, in that order).
    pub fn draw(rng: &mut Rng, max_shift: i64) -> AugmentParams {
        AugmentParams {
            flip: rng.next_bool(),
            dx: rng.next_range(-max_shift, max_shift),
            dy: rng.next_range(-max_shift, max_shift),
        }
    }

    /// Applies the transform to one `channels x h x w` sample stored as a
    /// flat slice, writing into a zeroed destination of the same length.
    pub(crate) fn apply(
        &self,
        src: &[f32],
        channels: usize,
        h: usize,
        w: usize,
        dst: &mut [f32],
    ) {
        debug_assert_eq!(src.len(), channels * h * w);
        debug_assert_eq!(dst.len(), src.len());
        for c in 0..channels {
            let plane = c * h * w;
            for y in 0..h as i64 {
                let sy = y - self.dy;
                if sy < 0 || sy >= h as i64 {
                    for x in 0..w {
                        dst[plane + y as usize * w + x] = 0.0;
                    }
                    continue;
                }
                for x in 0..w as i64 {
                    let sx = x - self.dx;
                    let v = if sx < 0 || sx >= w as i64 {
                        0.0
                    } else {
                        let col = if self.flip { w as i64 - 1 - sx } else { sx };
                        src[plane + sy as usize * w + col as usize]
                    };
                    dst[plane + y as usize * w + x as usize] = v;
                }
            }
        }
    }
}

/// Applies one fixed transform to every sample of `image`.
pub fn augment_with(image: &FeatureMap, params: &AugmentParams) -> FeatureMap {
    let d = image.dims();
    let mut out = Tensor::zeros(d);
    let sample_len = d.sample_len();
    for b in 0..d.batch {
        params.apply(
            image.sample(b),
            d.channels,
            d.height,
            d.width,
            &mut out.sample_mut(b)[..sample_len],
        );
    }
    out
}

/// Pure translation (no flip); positive `dx` moves content right, positive
/// `dy` moves it down, vacated borders are zero.
pub fn shift_image(image: &FeatureMap, dx: i64, dy: i64) -> FeatureMap {
    augment_with(image, &AugmentParams { flip: false, dx, dy })
}

/// Randomly flips and translates each sample independently, drawing from
/// per-sample streams of `rng` so the result is reproducible regardless of
/// evaluation order.
pub fn augment(image: &FeatureMap, rng: &Rng) -> Result<FeatureMap> {
    let d = image.dims();
    if d.height <= MAX_SHIFT as usize || d.width <= MAX_SHIFT as usize {
        return Err(Error::ShapeMismatch(format!(
            "image {d} too small for shifts up to {MAX_SHIFT}"
        )));
    }
    let mut out = Tensor::zeros(d);
    for b in 0..d.batch {
        let mut sample_rng = rng.stream(b as u64);
        let params = AugmentParams::draw(&mut sample_rng, MAX_SHIFT);
        params.apply(
            image.sample(b),
            d.channels,
            d.height,
            d.width,
            out.sample_mut(b),
        );
    }
    Ok(out)
}
