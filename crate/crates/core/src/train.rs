//! Loss, single optimization steps and the checkpointed training loop.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, NoiseModel, PatchBatch, PatchSampler};
use crate::error::{Error, Result};
use crate::network::{ierd_backward, ierd_forward, NetworkConfig, ParamStore};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::{Float, Tensor};

pub const CHECKPOINT_FILE: &str = "checkpoint.ierd";
pub const METRICS_FILE: &str = "metrics.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch: usize,
    pub patch_size: usize,
    pub noise: NoiseModel,
    pub adam: AdamConfig,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 100_000,
            batch: 32,
            patch_size: 64,
            noise: NoiseModel::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if self.patch_size == 0 {
            return Err(Error::config("patch", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        self.noise.validate()?;
        self.adam.validate()
    }
}

/// `(1/N)·Σᵢ ‖x̂ᵢ − xᵢ‖²` over the `N` batch items, with its gradient `(2/N)(x̂ − x)`.
pub fn mse_loss<T: Float>(x_hat: &Tensor<T>, x: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    x_hat.expect_same_shape(x, "mse_loss")?;
    let n = x.shape().n as f64;
    let value = x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    let scale = T::of_f64(2.0 / n);
    let grad = x_hat.zip_map(x, |a, b| scale * (a - b))?;
    Ok((value, grad))
}

/// One forward pass, backward pass and Adam update on a `(noisy, clean)` pair.
/// Returns the loss before the update. A non-finite loss aborts the step and
/// leaves parameters and optimizer state untouched.
pub fn train_step_on<T: Float>(
    store: &mut ParamStore<T>,
    adam: &mut AdamState<T>,
    noisy: &Tensor<T>,
    clean: &Tensor<T>,
) -> Result<f64> {
    let (x_hat, trace) = ierd_forward(noisy, store)?;
    let (loss, grad) = mse_loss(&x_hat, clean)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss ({loss}) at optimizer step {}", adam.t + 1)));
    }
    ierd_backward(&trace, &grad, store)?;
    let updated = adam_step(store, adam);
    store.zero_grad();
    updated.map(|_| loss)
}

pub fn train_step(store: &mut ParamStore<f32>, adam: &mut AdamState<f32>, batch: &PatchBatch) -> Result<f64> {
    train_step_on(store, adam, &batch.noisy, &batch.clean)
}

/// Runs training to `config.total_steps`, writing `checkpoint.ierd` and the
/// tab-separated `metrics.tsv` (`step`, `loss`, `lr`) into `out_dir`. Each
/// line holds the loss before the update and the rate that update used.
///
/// With `resume`, training continues from an existing checkpoint in `out_dir`
/// and metric lines past the checkpoint's step are dropped. Batches depend
/// only on `(seed, step)`, so a resumed run is bit-identical to an
/// uninterrupted one.
pub fn train_loop(
    network: &NetworkConfig,
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    resume: bool,
) -> Result<Checkpoint> {
    network.validate()?;
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    let sampler = PatchSampler::new(dataset, config.patch_size, config.batch, config.noise, config.seed)?;

    let (mut store, mut adam, mut step) = if resume && ckpt_path.exists() {
        let ck = Checkpoint::load(&ckpt_path)?;
        if ck.config() != network {
            return Err(Error::config(
                "network",
                format!("checkpoint was trained with {:?}, requested {:?}", ck.config(), network),
            ));
        }
        let mut adam = match ck.optimizer {
            Some(state) => state,
            None => AdamState::new(config.adam, &ck.store)?,
        };
        adam.config = config.adam;
        truncate_metrics(&metrics_path, ck.step)?;
        log::info!("resuming from step {}", ck.step);
        (ck.store, adam, ck.step)
    } else {
        let store = ParamStore::<f32>::he_init(network, config.seed)?;
        let adam = AdamState::new(config.adam, &store)?;
        if metrics_path.exists() {
            std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        }
        let init = Checkpoint::new(store, Some(adam), 0);
        init.save(&ckpt_path)?;
        (init.store, init.optimizer.expect("just set"), 0)
    };

    if step >= config.total_steps {
        return Ok(Checkpoint::new(store, Some(adam), step));
    }

    let mut metrics = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?,
    );
    while step < config.total_steps {
        let batch = sampler.batch(step)?;
        let lr = adam.config.lr_at(adam.t);
        let loss = train_step(&mut store, &mut adam, &batch)?;
        step += 1;
        writeln!(metrics, "{step}\t{loss}\t{lr}").map_err(|e| Error::io(&metrics_path, e))?;
        if step % config.checkpoint_every == 0 || step == config.total_steps {
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            let ck = Checkpoint::new(store, Some(adam), step);
            ck.save(&ckpt_path)?;
            log::info!("step {step}: loss {loss:.6}, lr {lr:e}");
            store = ck.store;
            adam = ck.optimizer.expect("just set");
        }
    }
    Ok(Checkpoint::new(store, Some(adam), step))
}

/// Keeps only metric lines with `step <= last_step`.
fn truncate_metrics(path: &PathBuf, last_step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let step: Option<u64> = line.split('\t').next().and_then(|s| s.parse().ok());
        if step.is_some_and(|s| s <= last_step) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Parses a metrics log into `(step, loss, lr)` rows.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<(u64, f64, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|line| {
            let mut cols = line.split('\t');
            let bad = || Error::Dataset(format!("{}: malformed metrics line '{line}'", path.display()));
            let step = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let loss = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let lr = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            Ok((step, loss, lr))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn loss_of_identical_tensors_is_zero() {
        let x = Tensor::<f32>::full(Shape::new(2, 1, 3, 3), 0.4).unwrap();
        let (v, g) = mse_loss(&x, &x).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_by_hand() {
        let a = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 0.5).unwrap();
        let b = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 1)).unwrap();
        let (v, g) = mse_loss(&a, &b).unwrap();
        assert_eq!(v, 0.25);
        assert_eq!(g.data(), &[1.0]);
        assert!(mse_loss(&a, &Tensor::zeros(Shape::new(1, 1, 1, 2)).unwrap()).is_err());
    }

    #[test]
    fn zero_network_on_zero_batch() {
        let cfg = NetworkConfig::new(1, 2, 2, 1);
        let mut store = ParamStore::<f32>::zeros(&cfg).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &store).unwrap();
        let zeros = Tensor::<f32>::zeros(Shape::new(2, 1, 4, 4)).unwrap();
        let loss = train_step_on(&mut store, &mut adam, &zeros, &zeros).unwrap();
        assert_eq!(loss, 0.0);
        // zero parameters stay zero under pure weight decay
        assert!(store.params().iter().all(|p| p.values().all(|&v| v == 0.0)));
        assert!(store.grads().iter().all(|p| p.values().all(|&v| v == 0.0)));
    }

    #[test]
    fn non_finite_loss_leaves_parameters_untouched() {
        let cfg = NetworkConfig::new(1, 2, 2, 1);
        let mut store = ParamStore::<f32>::he_init(&cfg, 0).unwrap();
        let before = store.params().to_vec();
        let mut adam = AdamState::new(AdamConfig::default(), &store).unwrap();
        let noisy = Tensor::<f32>::full(Shape::new(1, 1, 4, 4), 0.5).unwrap();
        let clean = Tensor::<f32>::full(Shape::new(1, 1, 4, 4), f32::INFINITY).unwrap();
        let err = train_step_on(&mut store, &mut adam, &noisy, &clean).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
        assert_eq!(store.params(), &before[..]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { checkpoint_every: 0, ..Default::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }
}
