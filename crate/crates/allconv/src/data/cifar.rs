//! CIFAR binary ingestion.
//!
//! Both dataset layouts are fixed-size binary records:
//!
//! * 10-class: 1 label byte, then 3072 pixel bytes (R, G, B planes,
//!   row-major 32x32) — 3073 bytes per record;
//! * 100-class: a coarse label byte (skipped), a fine label byte, then the
//!   same 3072 pixel bytes — 3074 bytes per record.
//!
//! Pixels are scaled to `[0, 1]` on load.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Dims, FeatureMap, Tensor};

/// Which half of a dataset a [`Dataset`] value holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// A labeled image collection: `N x 3 x 32 x 32` pixels plus one class
/// index per image.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: FeatureMap,
    pub labels: Vec<u16>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    /// Number of images.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// A copy of `count` consecutive images starting at `start`.
    pub fn subset(&self, start: usize, count: usize) -> Result<Dataset> {
        if start + count > self.len() {
            return Err(Error::ShapeMismatch(format!(
                "subset {start}..{} exceeds dataset of {} images",
                start + count,
                self.len()
            )));
        }
        Ok(Dataset {
            images: self.images.batch_range(start, count),
            labels: self.labels[start..start + count].to_vec(),
            classes: self.classes,
            split: self.split,
        })
    }

    fn validate_labels(&self) -> Result<()> {
        for &l in &self.labels {
            if usize::from(l) >= self.classes {
                return Err(Error::BadLabel {
                    label: usize::from(l),
                    classes: self.classes,
                });
            }
        }
        Ok(())
    }
}

const PIXELS: usize = 3 * 32 * 32;

/// Reads one record file. `label_offset` selects which header byte carries
/// the class (0 for the 10-class layout, 1 for the fine label of the
/// 100-class layout); `header` is the total header size.
fn read_records(
    path: &Path,
    header: usize,
    label_offset: usize,
    images: &mut Vec<f32>,
    labels: &mut Vec<u16>,
) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let record = header + PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::BadRecordLength {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            record,
        });
    }
    images.reserve(bytes.len() / record * PIXELS);
    for rec in bytes.chunks_exact(record) {
        labels.push(u16::from(rec[label_offset]));
        images.extend(rec[header..].iter().map(|&b| f32::from(b) / 255.0));
    }
    Ok(())
}

fn assemble(
    files: &[PathBuf],
    header: usize,
    label_offset: usize,
    classes: usize,
    split: Split,
) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        read_records(path, header, label_offset, &mut images, &mut labels)?;
    }
    let n = labels.len();
    let ds = Dataset {
        images: Tensor::from_vec(Dims::new(n, 3, 32, 32), images)?,
        labels,
        classes,
        split,
    };
    ds.validate_labels()?;
    Ok(ds)
}

/// Loads the 10-class dataset from its standard binary batch files
/// (`data_batch_1.bin` ... `data_batch_5.bin` and `test_batch.bin`).
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train_files: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    let train = assemble(&train_files, 1, 0, 10, Split::Train)?;
    let test = assemble(&[dir.join("test_batch.bin")], 1, 0, 10, Split::Test)?;
    Ok((train, test))
}

/// Loads the 100-class dataset (`train.bin` / `test.bin`, fine labels).
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = assemble(&[dir.join("train.bin")], 2, 1, 100, Split::Train)?;
    let test = assemble(&[dir.join("test.bin")], 2, 1, 100, Split::Test)?;
    Ok((train, test))
}
