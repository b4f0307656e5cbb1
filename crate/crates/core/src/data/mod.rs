//! Images, synthetic noise, geometric transforms and training patches.

pub mod image;
pub mod noise;
pub mod patches;
pub mod seed;
pub mod transform;

pub use self::image::{load_image, save_image, ImagePlane};
pub use noise::{add_awgn, NoiseModel};
pub use patches::{Dataset, PatchBatch, PatchItem, PatchSampler};
pub use seed::derive_seed;
pub use transform::GeometricTransform;
