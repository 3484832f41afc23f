//! File formats: feature containers, dataset manifests, and checkpoints.

mod checkpoint;
mod feature_file;
mod manifest;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointBundle, FeatureSpec, CKPT_FORMAT};
pub use feature_file::{FeatureFile, FileKind, DIST_RENORM_TOL};
pub use manifest::{activation_sibling, load_manifest, save_manifest, ManifestEntry};
