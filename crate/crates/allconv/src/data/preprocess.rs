//! Global contrast normalization and ZCA whitening, with a binary sidecar
//! for caching the fitted statistics.
//!
//! Fitting is strictly train-only: [`fit_preprocessing`] sees one dataset,
//! and [`apply_preprocessing`] transforms any dataset with the frozen
//! statistics. Per image the transform is
//!
//! ```text
//! g = (x - mean(x)) / max(std(x), gcn_eps)     per-image contrast norm
//! y = W * (g - m)                              whitening
//! ```
//!
//! where `m` is the dataset mean of the contrast-normalized images and
//! `W = (C + eps*I)^(-1/2)` for their covariance `C`. `W` is computed by a
//! Newton–Schulz iteration (three matrix products per step), which needs
//! only the GEMM kernel and converges quadratically for any symmetric
//! positive-definite input.

use std::path::Path;

use crate::data::cifar::Dataset;
use crate::error::{Error, Result};
use crate::ioutil::{atomic_write, crc32, Cursor, PutLe};
use crate::linalg::{dgemm, Op};
use crate::tensor::Tensor;

/// Standard-deviation floor for per-image contrast normalization.
pub const DEFAULT_GCN_EPS: f64 = 1e-8;

/// Frozen preprocessing statistics.
#[derive(Clone, Debug)]
pub struct PreprocStats {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Dataset mean of the contrast-normalized images (length `d`).
    pub mean: Vec<f32>,
    /// Symmetric whitening matrix, row-major `d x d`.
    pub whiten: Vec<f32>,
    pub gcn_eps: f64,
    pub zca_eps: f64,
}

impl PreprocStats {
    fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::ZeroDim("preprocessing dimensions".into()));
        }
        if self.mean.len() != d || self.whiten.len() != d * d {
            return Err(Error::LengthMismatch {
                dims: "preprocessing statistics".into(),
                expected: d + d * d,
                got: self.mean.len() + self.whiten.len(),
            });
        }
        Ok(())
    }
}

/// In-place per-row contrast normalization: subtract the row mean, divide
/// by `max(std, eps)`.
fn gcn_rows(rows: &mut [f64], d: usize, eps: f64) {
    for row in rows.chunks_exact_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let denom = var.sqrt().max(eps);
        for v in row.iter_mut() {
            *v = (*v - mean) / denom;
        }
    }
}

/// Copies samples `start..start+count` into an `count x d` f64 matrix.
fn rows_f64(images: &Tensor<f32>, start: usize, count: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count * d);
    for b in start..start + count {
        out.extend(images.sample(b).iter().map(|&v| f64::from(v)));
    }
    out
}

/// Rows processed per GEMM call; bounds peak memory at ~25 MB of staging
/// for 3072-dimensional images.
const CHUNK_ROWS: usize = 1024;

/// Newton–Schulz iteration for the inverse square root of a symmetric
/// positive-definite matrix, scaled into its convergence region by the
/// Gershgorin bound on the largest eigenvalue.
fn inv_sqrt_newton_schulz(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let bound = (0..d)
        .map(|i| a[i * d..(i + 1) * d].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    let mut y: Vec<f64> = a.iter().map(|v| v / bound).collect();
    let mut z = vec![0.0f64; d * d];
    for i in 0..d {
        z[i * d + i] = 1.0;
    }
    let mut e = vec![0.0f64; d * d];
    let mut t = vec![0.0f64; d * d];
    let mut next = vec![0.0f64; d * d];
    const MAX_ITERS: usize = 200;
    const TOL: f64 = 1e-10;
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        // e = z * y; converged when it reaches the identity.
        dgemm(d, d, d, 1.0, &z, Op::NoTrans, &y, Op::NoTrans, 0.0, &mut e)?;
        let mut err = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((e[i * d + j] - target).abs());
            }
        }
        if !err.is_finite() {
            return Err(Error::DegenerateCovariance);
        }
        if err < TOL {
            converged = true;
            break;
        }
        // t = (3I - e) / 2; y <- y t; z <- t z.
        for i in 0..d {
            for j in 0..d {
                let idx = i * d + j;
                t[idx] = if i == j { 1.5 - 0.5 * e[idx] } else { -0.5 * e[idx] };
            }
        }
        dgemm(d, d, d, 1.0, &y, Op::NoTrans, &t, Op::NoTrans, 0.0, &mut next)?;
        std::mem::swap(&mut y, &mut next);
        dgemm(d, d, d, 1.0, &t, Op::NoTrans, &z, Op::NoTrans, 0.0, &mut next)?;
        std::mem::swap(&mut z, &mut next);
    }
    if !converged {
        return Err(Error::DegenerateCovariance);
    }
    // z converged to (a/bound)^(-1/2); undo the scaling and symmetrize.
    let scale = 1.0 / bound.sqrt();
    let mut w = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            w[i * d + j] = 0.5 * (z[i * d + j] + z[j * d + i]) * scale;
        }
    }
    Ok(w)
}

/// Fits contrast-normalization + whitening statistics on `train`.
///
/// `zca_eps` defaults to 1% of the mean covariance eigenvalue
/// (`0.01 * trace(C) / d`) when not given.
pub fn fit_preprocessing(
    train: &Dataset,
    gcn_eps: f64,
    zca_eps: Option<f64>,
) -> Result<PreprocStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(gcn_eps > 0.0) {
        return Err(Error::BadRate(format!(
            "contrast-normalization epsilon must be positive, got {gcn_eps}"
        )));
    }
    let dims = train.images.dims();
    let d = dims.sample_len();
    let n = dims.batch;

    // Pass 1: dataset mean of the contrast-normalized images.
    let mut mean = vec![0.0f64; d];
    let mut start = 0;
    while start < n {
        let count = CHUNK_ROWS.min(n - start);
        let mut rows = rows_f64(&train.images, start, count, d);
        gcn_rows(&mut rows, d, gcn_eps);
        for row in rows.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        start += count;
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    // Pass 2: covariance of the centered images.
    let mut cov = vec![0.0f64; d * d];
    let mut start = 0;
    let mut first = true;
    while start < n {
        let count = CHUNK_ROWS.min(n - start);
        let mut rows = rows_f64(&train.images, start, count, d);
        gcn_rows(&mut rows, d, gcn_eps);
        for row in rows.chunks_exact_mut(d) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let beta = if first { 0.0 } else { 1.0 };
        dgemm(d, count, d, 1.0, &rows, Op::Trans, &rows, Op::NoTrans, beta, &mut cov)?;
        first = false;
        start += count;
    }
    for v in cov.iter_mut() {
        *v /= n as f64;
    }

    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let eps = match zca_eps {
        Some(e) if e >= 0.0 && e.is_finite() => e,
        Some(e) => {
            return Err(Error::BadRate(format!(
                "whitening epsilon must be non-negative, got {e}"
            )))
        }
        None => 0.01 * trace / d as f64,
    };
    for i in 0..d {
        cov[i * d + i] += eps;
    }
    let whiten = inv_sqrt_newton_schulz(&cov, d)?;

    Ok(PreprocStats {
        channels: dims.channels,
        height: dims.height,
        width: dims.width,
        mean: mean.iter().map(|&v| v as f32).collect(),
        whiten: whiten.iter().map(|&v| v as f32).collect(),
        gcn_eps,
        zca_eps: eps,
    })
}

/// Applies frozen statistics to a dataset, producing a transformed copy.
pub fn apply_preprocessing(stats: &PreprocStats, ds: &Dataset) -> Result<Dataset> {
    stats.validate()?;
    let dims = ds.images.dims();
    if dims.channels != stats.channels
        || dims.height != stats.height
        || dims.width != stats.width
    {
        return Err(Error::ShapeMismatch(format!(
            "dataset images {dims} do not match fitted statistics \
             {}x{}x{}",
            stats.channels, stats.height, stats.width
        )));
    }
    let d = stats.dim();
    let n = dims.batch;
    let mean: Vec<f64> = stats.mean.iter().map(|&v| f64::from(v)).collect();
    let whiten: Vec<f64> = stats.whiten.iter().map(|&v| f64::from(v)).collect();
    let mut out = vec![0.0f32; n * d];
    let mut start = 0;
    while start < n {
        let count = CHUNK_ROWS.min(n - start);
        let mut rows = rows_f64(&ds.images, start, count, d);
        gcn_rows(&mut rows, d, stats.gcn_eps);
        for row in rows.chunks_exact_mut(d) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        // Whitened rows: y_i = x_i * W (W symmetric).
        let mut product = vec![0.0f64; count * d];
        dgemm(
            count,
            d,
            d,
            1.0,
            &rows,
            Op::NoTrans,
            &whiten,
            Op::NoTrans,
            0.0,
            &mut product,
        )?;
        for (dst, src) in out[start * d..(start + count) * d].iter_mut().zip(&product) {
            *dst = *src as f32;
        }
        start += count;
    }
    Ok(Dataset {
        images: Tensor::from_vec(dims, out)?,
        labels: ds.labels.clone(),
        classes: ds.classes,
        split: ds.split,
    })
}

const STATS_MAGIC: &[u8; 4] = b"ACNS";
const STATS_VERSION: u32 = 1;

/// Serializes statistics to `path` (atomic write, trailing CRC-32).
pub fn save_stats(stats: &PreprocStats, path: &Path) -> Result<()> {
    stats.validate()?;
    let mut buf = Vec::with_capacity(32 + 4 * (stats.mean.len() + stats.whiten.len()));
    buf.extend_from_slice(STATS_MAGIC);
    buf.put_u32(STATS_VERSION);
    buf.put_u32(stats.channels as u32);
    buf.put_u32(stats.height as u32);
    buf.put_u32(stats.width as u32);
    buf.put_f64(stats.gcn_eps);
    buf.put_f64(stats.zca_eps);
    for &v in &stats.mean {
        buf.put_f32(v);
    }
    for &v in &stats.whiten {
        buf.put_f32(v);
    }
    let crc = crc32(&buf);
    buf.put_u32(crc);
    atomic_write(path, &buf)
}

/// Loads statistics written by [`save_stats`]. Validation order: magic
/// bytes, version, trailing checksum, then structure.
pub fn load_stats(path: &Path) -> Result<PreprocStats> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < STATS_MAGIC.len() || &bytes[..STATS_MAGIC.len()] != STATS_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::ChecksumMismatch);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != STATS_VERSION {
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
    let channels = cur.u32()? as usize;
    let height = cur.u32()? as usize;
    let width = cur.u32()? as usize;
    let gcn_eps = cur.f64()?;
    let zca_eps = cur.f64()?;
    let d = channels
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or(Error::ChecksumMismatch)?;
    let mut mean = Vec::with_capacity(d);
    for _ in 0..d {
        mean.push(cur.f32()?);
    }
    let mut whiten = Vec::with_capacity(d * d);
    for _ in 0..d * d {
        whiten.push(cur.f32()?);
    }
    if cur.remaining() != 0 {
        return Err(Error::Config(format!(
            "statistics file: {} unexpected trailing bytes",
            cur.remaining()
        )));
    }
    let stats = PreprocStats {
        channels,
        height,
        width,
        mean,
        whiten,
        gcn_eps,
        zca_eps,
    };
    stats.validate()?;
    Ok(stats)
}
