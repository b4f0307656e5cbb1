//! Run configuration: defaults, then the config file, then `IERD_*`
//! environment variables and command-line flags.

use std::path::{Path, PathBuf};

use ierd_core::data::NoiseModel;
use ierd_core::network::NetworkConfig;
use ierd_core::optim::AdamConfig;
use ierd_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// File name of the resolved configuration written into output directories.
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 1 keeps every command bit-reproducible.
    pub threads: usize,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub noise: NoiseSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub modules: usize,
    pub layers: usize,
    pub channels: usize,
    pub image_channels: usize,
    /// Per-layer dilations; empty means the default `[1, 3, 3, ...]`.
    pub dilations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub halving_period: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub checkpoint_every: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseRegime {
    Specific,
    Agnostic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub regime: NoiseRegime,
    /// σ on the 0–255 scale for the noise-specific regime and for evaluation.
    pub sigma: f32,
    pub sigma_min: f32,
    pub sigma_max: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            network: NetworkSection::default(),
            train: TrainSection::default(),
            noise: NoiseSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::default();
        NetworkSection {
            modules: n.modules,
            layers: n.layers,
            channels: n.channels,
            image_channels: n.image_channels,
            dilations: Vec::new(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            steps: t.total_steps,
            batch: t.batch,
            patch: t.patch_size,
            lr: t.adam.base_lr,
            halving_period: t.adam.halving_period,
            weight_decay: t.adam.weight_decay,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            regime: NoiseRegime::Specific,
            sigma: 25.0,
            sigma_min: 0.0,
            sigma_max: ierd_core::data::noise::DEFAULT_AGNOSTIC_MAX,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigFile {
            path: origin.to_path_buf(),
            reason: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo_into(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }

    pub fn network(&self) -> CliResult<NetworkConfig> {
        let n = &self.network;
        let mut cfg = NetworkConfig::new(n.modules, n.layers, n.channels, n.image_channels);
        if !n.dilations.is_empty() {
            cfg = cfg.with_dilations(n.dilations.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noise(&self) -> NoiseModel {
        match self.noise.regime {
            NoiseRegime::Specific => NoiseModel::Specific { sigma: self.noise.sigma },
            NoiseRegime::Agnostic => NoiseModel::Agnostic {
                min: self.noise.sigma_min,
                max: self.noise.sigma_max,
            },
        }
    }

    pub fn train(&self) -> CliResult<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            total_steps: t.steps,
            batch: t.batch,
            patch_size: t.patch,
            noise: self.noise(),
            adam: AdamConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                base_lr: t.lr,
                halving_period: t.halving_period,
                weight_decay: t.weight_decay,
            },
            checkpoint_every: t.checkpoint_every,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `lo:hi` for `--noise-agnostic`.
pub fn parse_sigma_range(text: &str) -> Result<(f32, f32), String> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got '{text}'"))?;
    let parse = |s: &str| s.trim().parse::<f32>().map_err(|_| format!("'{s}' is not a number"));
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(format!("need 0 <= lo <= hi, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}
