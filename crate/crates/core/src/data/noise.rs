//! Additive white Gaussian noise on the 0–255 σ scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Upper end of the default noise-agnostic σ range.
pub const DEFAULT_AGNOSTIC_MAX: f32 = 55.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// One model per noise level.
    Specific { sigma: f32 },
    /// σ drawn uniformly from `[min, max]` for every patch.
    Agnostic { min: f32, max: f32 },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Specific { sigma: 25.0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Specific { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::config("sigma", format!("must be a finite value >= 0, got {sigma}")))
            }
            NoiseModel::Agnostic { min, max }
                if !(min >= 0.0 && min <= max && max.is_finite()) =>
            {
                Err(Error::config(
                    "noise-agnostic",
                    format!("need 0 <= lo <= hi, got {min}:{max}"),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn sample_sigma<R: Rng>(&self, rng: &mut R) -> f32 {
        match *self {
            NoiseModel::Specific { sigma } => sigma,
            NoiseModel::Agnostic { min, max } if min == max => min,
            NoiseModel::Agnostic { min, max } => rng.gen_range(min..=max),
        }
    }
}

/// `clean + n`, `n ~ N(0, (σ/255)²)` i.i.d. per element, deterministic per seed.
/// The result is not clamped.
pub fn add_awgn(clean: &Tensor<f32>, sigma: f32, seed: u64) -> Tensor<f32> {
    if sigma == 0.0 {
        return clean.clone();
    }
    let std = f64::from(sigma) / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean.map(|v| {
        let z: f64 = rng.sample(StandardNormal);
        (f64::from(v) + std * z) as f32
    })
}
