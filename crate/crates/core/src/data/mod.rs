//! Tactile recordings: tensors, on-disk datasets, normalization and
//! synthetic task generation.

mod manifest;
mod normalize;
mod synthetic;
mod tensor;

pub use manifest::{load_dataset, write_dataset, DatasetSplit, LoadOptions, Manifest, ManifestRecord, SplitKind};
pub use normalize::{denormalize, normalize, NormalizationStats, STD_FLOOR};
pub use synthetic::{generate_synthetic, ClassFamily, SyntheticMode, SyntheticTaskSpec};
pub use tensor::{LabeledSample, TactileTensor, TensorShape, DEFAULT_SAMPLE_RATE_HZ};
