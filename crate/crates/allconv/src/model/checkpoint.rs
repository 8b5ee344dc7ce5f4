//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ACNK"  magic
//! u32     format version (currently 1)
//! u32     name length, then that many UTF-8 bytes
//! u32     input channels
//! u32     input spatial edge
//! u32     classes
//! u32     layer count, then one record per layer:
//!           u8 tag: 0 conv, 1 max-pool, 2 p-norm pool, 3 dropout,
//!                   4 global average, 5 softmax loss
//!           conv:       u32 out, in, kernel, stride, padding;
//!                       u8 activation (0 identity, 1 relu, 2 leaky);
//!                       f64 slope
//!           pools:      u32 kernel, stride; p-norm adds f64 p
//!           dropout:    f64 rate
//! f32[]   per conv layer in order: weights then biases
//! u32     CRC-32 of every preceding byte
//! ```
//!
//! Weights are stored as `f32` regardless of the in-memory scalar. Files are
//! written atomically (temp file + rename), so a crash never leaves a
//! half-written checkpoint at the target path.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ioutil::{atomic_write, crc32, Cursor, PutLe};
use crate::layers::{Activation, ConvParams};
use crate::model::{LayerSpec, Model};
use crate::tensor::Scalar;

const MAGIC: &[u8; 4] = b"ACNK";
const VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_MAXPOOL: u8 = 1;
const TAG_PNORM: u8 = 2;
const TAG_DROPOUT: u8 = 3;
const TAG_GAP: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

const ACT_IDENTITY: u8 = 0;
const ACT_RELU: u8 = 1;
const ACT_LEAKY: u8 = 2;

fn encode_activation(a: Activation) -> (u8, f64) {
    match a {
        Activation::Identity => (ACT_IDENTITY, 0.0),
        Activation::Relu => (ACT_RELU, 0.0),
        Activation::LeakyRelu { slope } => (ACT_LEAKY, slope),
    }
}

fn decode_activation(code: u8, slope: f64) -> Result<Activation> {
    match code {
        ACT_IDENTITY => Ok(Activation::Identity),
        ACT_RELU => Ok(Activation::Relu),
        ACT_LEAKY => {
            if !(slope.is_finite() && slope > 0.0 && slope < 1.0) {
                return Err(Error::Config(format!(
                    "checkpoint: leaky activation slope {slope} out of range"
                )));
            }
            Ok(Activation::LeakyRelu { slope })
        }
        other => Err(Error::Config(format!(
            "checkpoint: unknown activation code {other}"
        ))),
    }
}

/// Serializes `model` to `path`, converting parameters to `f32`.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    model.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.put_u32(VERSION);
    let name = model.name.as_bytes();
    buf.put_u32(name.len() as u32);
    buf.extend_from_slice(name);
    buf.put_u32(model.in_channels as u32);
    buf.put_u32(model.in_spatial as u32);
    buf.put_u32(model.classes as u32);
    buf.put_u32(model.layers.len() as u32);
    let mut pi = 0usize;
    for layer in &model.layers {
        match layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                activation,
            } => {
                buf.put_u8(TAG_CONV);
                buf.put_u32(*out_channels as u32);
                buf.put_u32(model.params[pi].in_channels as u32);
                buf.put_u32(*kernel as u32);
                buf.put_u32(*stride as u32);
                buf.put_u32(*padding as u32);
                let (code, slope) = encode_activation(*activation);
                buf.put_u8(code);
                buf.put_f64(slope);
                pi += 1;
            }
            LayerSpec::MaxPool { kernel, stride } => {
                buf.put_u8(TAG_MAXPOOL);
                buf.put_u32(*kernel as u32);
                buf.put_u32(*stride as u32);
            }
            LayerSpec::PNormPool { kernel, stride, p } => {
                buf.put_u8(TAG_PNORM);
                buf.put_u32(*kernel as u32);
                buf.put_u32(*stride as u32);
                buf.put_f64(*p);
            }
            LayerSpec::Dropout { rate } => {
                buf.put_u8(TAG_DROPOUT);
                buf.put_f64(*rate);
            }
            LayerSpec::GlobalAvg => buf.put_u8(TAG_GAP),
            LayerSpec::SoftmaxCE => buf.put_u8(TAG_SOFTMAX),
        }
    }
    for p in &model.params {
        for w in &p.weights {
            buf.put_f32(w.to_f64() as f32);
        }
        for b in &p.bias {
            buf.put_f32(b.to_f64() as f32);
        }
    }
    let crc = crc32(&buf);
    buf.put_u32(crc);
    atomic_write(path, &buf)
}

/// Loads a checkpoint written by [`save_checkpoint`]. Validation order:
/// magic bytes, format version, trailing checksum, then structure.
pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::ChecksumMismatch);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    if bytes.len() < 12 {
        return Err(Error::ChecksumMismatch);
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(body) != stored {
        return Err(Error::ChecksumMismatch);
    }

    let mut cur = Cursor::new(&body[8..]);
    let name_len = cur.u32()? as usize;
    let name = String::from_utf8(cur.take(name_len)?.to_vec())
        .map_err(|_| Error::Config("checkpoint: model name is not UTF-8".into()))?;
    let in_channels = cur.u32()? as usize;
    let in_spatial = cur.u32()? as usize;
    let classes = cur.u32()? as usize;
    let layer_count = cur.u32()? as usize;

    let mut layers = Vec::with_capacity(layer_count);
    // (out, in, kernel, stride, padding, activation) per conv layer.
    let mut conv_meta = Vec::new();
    for _ in 0..layer_count {
        match cur.u8()? {
            TAG_CONV => {
                let out = cur.u32()? as usize;
                let inc = cur.u32()? as usize;
                let kernel = cur.u32()? as usize;
                let stride = cur.u32()? as usize;
                let padding = cur.u32()? as usize;
                let code = cur.u8()?;
                let slope = cur.f64()?;
                let activation = decode_activation(code, slope)?;
                layers.push(LayerSpec::Conv {
                    out_channels: out,
                    kernel,
                    stride,
                    padding,
                    activation,
                });
                conv_meta.push((out, inc, kernel, stride, padding, activation));
            }
            TAG_MAXPOOL => {
                let kernel = cur.u32()? as usize;
                let stride = cur.u32()? as usize;
                layers.push(LayerSpec::MaxPool { kernel, stride });
            }
            TAG_PNORM => {
                let kernel = cur.u32()? as usize;
                let stride = cur.u32()? as usize;
                let p = cur.f64()?;
                layers.push(LayerSpec::PNormPool { kernel, stride, p });
            }
            TAG_DROPOUT => {
                layers.push(LayerSpec::Dropout { rate: cur.f64()? });
            }
            TAG_GAP => layers.push(LayerSpec::GlobalAvg),
            TAG_SOFTMAX => layers.push(LayerSpec::SoftmaxCE),
            other => {
                return Err(Error::Config(format!(
                    "checkpoint: unknown layer tag {other}"
                )))
            }
        }
    }

    let mut params = Vec::with_capacity(conv_meta.len());
    for (out, inc, kernel, stride, padding, activation) in conv_meta {
        let mut p = ConvParams::<f32>::zeros(inc, out, kernel, stride, padding, activation)?;
        for w in p.weights.iter_mut() {
            *w = cur.f32()?;
        }
        for b in p.bias.iter_mut() {
            *b = cur.f32()?;
        }
        params.push(p);
    }
    if cur.remaining() != 0 {
        return Err(Error::Config(format!(
            "checkpoint: {} unexpected trailing bytes",
            cur.remaining()
        )));
    }

    let model = Model {
        name,
        layers,
        params,
        in_channels,
        in_spatial,
        classes,
    };
    model.validate()?;
    Ok(model)
}
