use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the subsystem that raises
/// them; all public fallible operations return [`Result`].
#[derive(Debug, Error)]
pub enum Error {
    /// Flat buffer length does not match the product of the dimensions.
    #[error("data length {got} does not match dims {dims} (expected {expected})")]
    LengthMismatch {
        dims: String,
        expected: usize,
        got: usize,
    },

    /// A dimension was zero where at least 1 is required.
    #[error("zero-sized dimension in {0}")]
    ZeroDim(String),

    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An operation would produce an output with no elements.
    #[error("empty output: {0}")]
    EmptyOutput(String),

    /// A rate or order parameter lies outside its legal range.
    #[error("parameter out of range: {0}")]
    BadRate(String),

    /// A class label is outside `0..classes`.
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },

    /// The architecture id is not one of the known model names.
    #[error("unknown architecture '{0}'")]
    UnknownArchitecture(String),

    /// Width scale must lie in (0, 1].
    #[error("scale must lie in (0, 1], got {0}")]
    BadScale(f64),

    /// Class count must be one of the supported values.
    #[error("class count must be 10, 100, or 1000, got {0}")]
    BadClasses(usize),

    /// Pool surgery was requested on a model with no stride-2 convolutions.
    #[error("model has no stride-2 convolutions to split into conv + pool")]
    NoStridedLayers,

    /// An I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// The file does not start with the expected magic bytes.
    #[error("bad magic bytes: not a recognized binary file")]
    BadMagic,

    /// The file's format version is not supported by this build.
    #[error("unsupported format version {0}")]
    VersionMismatch(u32),

    /// The file is truncated or its trailing checksum does not match.
    #[error("checksum mismatch: file truncated or corrupt")]
    ChecksumMismatch,

    /// Training produced a non-finite loss.
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },

    /// An optimizer step saw a non-finite gradient.
    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(usize),

    /// A dataset with zero records was supplied where data is required.
    #[error("dataset is empty")]
    EmptyDataset,

    /// A binary data file's length is not a multiple of its record size.
    #[error("{path}: length {len} is not a whole number of {record}-byte records")]
    BadRecordLength {
        path: PathBuf,
        len: u64,
        record: usize,
    },

    /// The covariance inverse square root failed to converge.
    #[error("degenerate covariance: inverse square root did not converge")]
    DegenerateCovariance,

    /// A neuron reference does not resolve to a convolution output.
    #[error("bad neuron reference: {0}")]
    BadNeuron(String),

    /// Switch-based unpooling was requested but no switches are available.
    #[error("switches unavailable: {0}")]
    SwitchesUnavailable(String),

    /// A run configuration file is invalid.
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Wraps an I/O error with the path that produced it.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
