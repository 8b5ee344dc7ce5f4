//! All-convolutional image classifiers.
//!
//! This crate implements a family of small convolutional networks in which
//! every downsampling step is performed either by max-pooling or by a
//! convolution with stride 2, together with everything needed to train and
//! inspect them on CIFAR-sized inputs:
//!
//! * dense tensors with deterministic, counter-based random streams
//!   ([`Tensor`], [`Rng`]),
//! * forward and backward kernels for convolution, p-norm/max pooling,
//!   dropout, global average pooling and softmax cross-entropy
//!   ([`layers`]),
//! * declarative architecture construction for the base models `A`/`B`/`C`
//!   and their `Strided`, `ConvPool` and `AllCNN` derivatives, plus the
//!   large CIFAR and ImageNet-shaped variants ([`model`]),
//! * SGD with momentum, milestone learning-rate schedules, weight decay and
//!   flip/translation augmentation ([`train`]),
//! * CIFAR binary ingestion, global contrast normalization, ZCA whitening
//!   and PPM/PGM image emission ([`data`]),
//! * feature visualization through plain, "deconvnet" and guided
//!   backpropagation, with optional max-pool switch routing ([`saliency`]).
//!
//! Every operation is deterministic: identical seeds produce identical
//! results bit-for-bit, regardless of the worker-thread count (capped via
//! the `ACNK_THREADS` environment variable).
//!
//! The `examples/` directory shows one runnable program per capability; the
//! thin `allconv` binary exposes the same functionality as subcommands
//! (`train`, `eval`, `visualize`, `count-params`, `surgery`, `preprocess`).

pub mod cli;
pub mod data;
pub mod error;
mod ioutil;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_architecture, load_checkpoint, save_checkpoint, Model};
pub use rng::Rng;
pub use tensor::{feature_map_create, map_elementwise, Dims, ElementwiseOp, FeatureMap, Scalar, Tensor};
