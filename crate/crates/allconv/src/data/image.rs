//! Binary PPM (P6) / PGM (P5) emission for rendered feature maps, a small
//! reference reader for round-trip checks, and grid tiling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, FeatureMap, Tensor};

/// A decoded 8-bit image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageFile {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    /// Row-major, channel-interleaved.
    pub pixels: Vec<u8>,
}

fn quantize(map: &FeatureMap, normalize: bool) -> Vec<u8> {
    let data = map.data();
    let (lo, hi) = if normalize {
        data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    } else {
        (0.0, 1.0)
    };
    let d = map.dims();
    let mut out = Vec::with_capacity(d.len());
    // Emit channel-interleaved rows from the channel-major map.
    for y in 0..d.height {
        for x in 0..d.width {
            for c in 0..d.channels {
                let v = map.at(0, c, y, x);
                let byte = if normalize && hi == lo {
                    // Degenerate range: render mid-gray.
                    128
                } else {
                    let unit = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                    (unit * 255.0).round() as u8
                };
                out.push(byte);
            }
        }
    }
    out
}

/// Writes a single map (batch 1; 1 or 3 channels) as binary PGM (P5) or
/// PPM (P6). With `normalize`, `[min, max]` maps onto `[0, 255]` (a
/// constant map renders mid-gray 128); without it, values are clamped to
/// `[0, 1]` and scaled.
pub fn write_image(map: &FeatureMap, path: &Path, normalize: bool) -> Result<()> {
    let d = map.dims();
    if d.batch != 1 || !(d.channels == 1 || d.channels == 3) {
        return Err(Error::ShapeMismatch(format!(
            "image output needs batch 1 and 1 or 3 channels, got {d}"
        )));
    }
    let tag = if d.channels == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{tag}\n{} {}\n255\n", d.width, d.height).into_bytes();
    bytes.extend(quantize(map, normalize));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses the binary PGM/PPM files written by [`write_image`] (and any
/// other writer using whitespace-separated header fields and `#` comments).
pub fn read_ppm(path: &Path) -> Result<ImageFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Config(format!("{}: {msg}", path.display()));
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::BadMagic),
    };
    // Read three whitespace-separated integers, skipping '#' comments.
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad("missing header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only 8-bit files are supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let expected = width * height * channels;
    if bytes.len() - pos != expected {
        return Err(Error::BadRecordLength {
            path: path.to_path_buf(),
            len: (bytes.len() - pos) as u64,
            record: expected,
        });
    }
    Ok(ImageFile {
        width,
        height,
        channels,
        pixels: bytes[pos..].to_vec(),
    })
}

/// Tiles single-sample maps of identical shape into a grid `row_width`
/// tiles wide, separated by 2-pixel black gutters. Unfilled grid cells stay
/// black. Tile values are copied unchanged, so normalize per tile before
/// tiling if tiles have different ranges.
pub fn tile_grid(maps: &[FeatureMap], row_width: usize) -> Result<FeatureMap> {
    const GUTTER: usize = 2;
    if maps.is_empty() || row_width == 0 {
        return Err(Error::ZeroDim("tile grid".into()));
    }
    let d = maps[0].dims();
    if d.batch != 1 {
        return Err(Error::ShapeMismatch("tiles must have batch 1".into()));
    }
    for m in maps {
        if m.dims() != d {
            return Err(Error::ShapeMismatch(format!(
                "tile {} differs from first tile {d}",
                m.dims()
            )));
        }
    }
    let cols = row_width.min(maps.len());
    let rows = maps.len().div_ceil(row_width);
    let out_h = rows * d.height + (rows - 1) * GUTTER;
    let out_w = cols * d.width + (cols - 1) * GUTTER;
    let mut out = Tensor::zeros(Dims::new(1, d.channels, out_h, out_w));
    for (i, m) in maps.iter().enumerate() {
        let (row, col) = (i / row_width, i % row_width);
        let oy = row * (d.height + GUTTER);
        let ox = col * (d.width + GUTTER);
        for c in 0..d.channels {
            for y in 0..d.height {
                for x in 0..d.width {
                    out.set(0, c, oy + y, ox + x, m.at(0, c, y, x));
                }
            }
        }
    }
    Ok(out)
}
