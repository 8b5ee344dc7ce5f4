//! Dataset ingestion, preprocessing (global contrast normalization + ZCA
//! whitening), training-time augmentation, synthetic desk-scale data, and
//! PPM/PGM image emission.

mod augment;
mod cifar;
mod image;
mod preprocess;
mod synthetic;

pub use augment::{augment, augment_with, shift_image, AugmentParams, MAX_SHIFT};
pub use cifar::{load_cifar10, load_cifar100, Dataset, Split};
pub use image::{read_ppm, tile_grid, write_image, ImageFile};
pub use preprocess::{
    apply_preprocessing, fit_preprocessing, load_stats, save_stats, PreprocStats,
    DEFAULT_GCN_EPS,
};
pub use synthetic::{synthetic_dataset, write_synthetic_cifar10_dir};
