//! On-the-fly training patches: random crop, random dihedral augmentation,
//! then synthetic noise on the augmented clean crop.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::image::{load_image, ImagePlane};
use crate::data::noise::{add_awgn, NoiseModel};
use crate::data::seed::derive_seed;
use crate::data::transform::GeometricTransform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STEP_STREAM: u64 = 0x5354_4550; // "STEP"
const NOISE_STREAM: u64 = 0x4E4F_4953; // "NOIS"

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Immutable set of clean training images.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    images: Vec<ImagePlane>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<ImagePlane>, names: Vec<String>) -> Result<Self> {
        if images.len() != names.len() {
            return Err(Error::Dataset(format!("{} images but {} names", images.len(), names.len())));
        }
        Ok(Dataset { images, names })
    }

    /// Loads every image file in a directory (sorted by file name), or every
    /// path listed in a manifest file (one per line, `#` starts a comment,
    /// relative paths are resolved against the manifest's directory).
    /// Images are converted to `channels`.
    pub fn load(path: impl AsRef<Path>, channels: usize) -> Result<Self> {
        let path = path.as_ref();
        let files = if path.is_dir() {
            list_images(path)?
        } else if path.is_file() {
            read_manifest(path)?
        } else {
            return Err(Error::Dataset(format!("{} does not exist", path.display())));
        };
        if files.is_empty() {
            return Err(Error::Dataset(format!("no images found in {}", path.display())));
        }
        let mut images = Vec::with_capacity(files.len());
        let mut names = Vec::with_capacity(files.len());
        for file in files {
            images.push(load_image(&file)?.to_channels(channels)?);
            names.push(file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        }
        Dataset::new(images, names)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImagePlane] {
        &self.images
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let known = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if p.is_file() && known {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() { p } else { base.join(p) }
        })
        .collect())
}

/// Everything needed to rebuild one training pair bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchItem {
    pub image: usize,
    pub top: usize,
    pub left: usize,
    pub transform: GeometricTransform,
    /// Noise level on the 0–255 scale.
    pub sigma: f32,
    pub noise_seed: u64,
}

#[derive(Clone, Debug)]
pub struct PatchBatch {
    pub clean: Tensor<f32>,
    pub noisy: Tensor<f32>,
    pub items: Vec<PatchItem>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PatchSampler<'a> {
    dataset: &'a Dataset,
    patch: usize,
    batch: usize,
    noise: NoiseModel,
    seed: u64,
    eligible: Vec<usize>,
}

impl<'a> PatchSampler<'a> {
    /// Images smaller than `patch` in either dimension are skipped with a warning.
    pub fn new(dataset: &'a Dataset, patch: usize, batch: usize, noise: NoiseModel, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        if patch == 0 {
            return Err(Error::config("patch", "must be at least 1"));
        }
        if batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        noise.validate()?;
        let mut eligible = Vec::with_capacity(dataset.len());
        for (i, img) in dataset.images().iter().enumerate() {
            if img.height() >= patch && img.width() >= patch {
                eligible.push(i);
            } else {
                log::warn!(
                    "skipping {} ({}x{}): smaller than the {patch}x{patch} patch",
                    dataset.names()[i],
                    img.height(),
                    img.width()
                );
            }
        }
        if eligible.is_empty() {
            return Err(Error::Dataset(format!("no image is at least {patch}x{patch} pixels")));
        }
        Ok(PatchSampler { dataset, patch, batch, noise, seed, eligible })
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// The batch for training step `step`; a pure function of `(seed, step)`.
    pub fn batch(&self, step: u64) -> Result<PatchBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, STEP_STREAM, step]));
        let mut items = Vec::with_capacity(self.batch);
        for index in 0..self.batch {
            let image = self.eligible[rng.gen_range(0..self.eligible.len())];
            let img = &self.dataset.images()[image];
            let top = rng.gen_range(0..=img.height() - self.patch);
            let left = rng.gen_range(0..=img.width() - self.patch);
            let transform = GeometricTransform::new(rng.gen_range(0..8)).expect("in range");
            let sigma = self.noise.sample_sigma(&mut rng);
            let noise_seed = derive_seed(&[
                self.seed,
                NOISE_STREAM,
                step,
                index as u64,
                image as u64,
                top as u64,
                left as u64,
            ]);
            items.push(PatchItem { image, top, left, transform, sigma, noise_seed });
        }
        let mut clean = Vec::with_capacity(self.batch);
        let mut noisy = Vec::with_capacity(self.batch);
        for item in &items {
            let (c, n) = self.pair(item)?;
            clean.push(c);
            noisy.push(n);
        }
        Ok(PatchBatch {
            clean: Tensor::stack(&clean)?,
            noisy: Tensor::stack(&noisy)?,
            items,
        })
    }

    /// Rebuilds the `(clean, noisy)` single-item tensors for one item.
    pub fn pair(&self, item: &PatchItem) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let img = self
            .dataset
            .images()
            .get(item.image)
            .ok_or_else(|| Error::Dataset(format!("image index {} out of range", item.image)))?;
        let crop = img.crop(item.top, item.left, self.patch, self.patch)?;
        let clean = item.transform.apply(&crop.to_tensor());
        let noisy = add_awgn(&clean, item.sigma, item.noise_seed);
        Ok((clean, noisy))
    }
}
