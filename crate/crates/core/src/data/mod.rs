//! Dataset ingestion, synthetic data, and label noise.

mod dataset;
pub mod idx;
mod noise;
mod synthetic;

pub(crate) use dataset::hex;
pub use dataset::{Dataset, ImageSet};
pub use idx::{maybe_gunzip, parse_idx, parse_idx_images, parse_idx_labels, serialize_idx, IdxImages};
pub use noise::{inject_label_noise, NoiseSpec};
pub use synthetic::{make_synthetic, make_synthetic_with, SyntheticSpec};
