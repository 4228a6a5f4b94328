//! Dataset pipeline: sample ingestion from the on-disk layout, derived
//! polarization channels, augmentation, value-distribution statistics, the
//! synthetic scene generator and the PDER tensor format.

mod augment;
mod loader;
mod pder;
mod stats;
mod synth;
mod types;

pub use augment::{augment, per_sample_seed};
pub use loader::{list_ids, load_quad, load_sample, sample_from_quad, write_sample_dir};
pub use pder::{load_derived, save_derived, PderTensor};
pub use stats::{histogram, DatasetStats};
pub use synth::{synthesize_dataset, synthesize_quad, synthesize_scene, Material, SyntheticSceneConfig};
pub use types::{
    AugmentationConfig, DataError, ModalityKind, ModalityMode, ModalityPlane, Result, Sample,
    CLASS_NAMES, CLASS_PALETTE, NUM_CLASSES,
};
