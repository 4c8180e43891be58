//! Image files, dataset manifests and the synthetic corpus.

pub mod image_io;
pub mod manifest;
pub mod synth;

pub use image_io::{decode_image, encode_image, load_image, save_image};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{generate_synthetic, generate_synthetic_with_channels};
