//! `ierd` command line: train, denoise and eval subcommands.

pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ierd_core::checkpoint::Checkpoint;
use ierd_core::data::patches::list_images;
use ierd_core::data::{load_image, save_image, Dataset};
use ierd_core::eval::{denoise_image, evaluate, self_ensemble, DenoiseOptions};
use ierd_core::train::{train_loop, CHECKPOINT_FILE, METRICS_FILE};

pub use config::{parse_sigma_range, NoiseRegime, RunConfig, RESOLVED_CONFIG_FILE};
pub use error::{CliError, CliResult};

/// File name of the per-image evaluation table.
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Parser)]
#[command(name = "ierd", version, about = "Train and run IERD image denoisers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on clean images with synthetic Gaussian noise.
    Train(TrainArgs),
    /// Denoise an image or every image in a directory.
    Denoise(DenoiseArgs),
    /// Add noise to clean images, denoise them and report PSNR/SSIM.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file (`key = value` lines under [network], [train], [noise], [paths]).
    #[arg(long, env = "IERD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "IERD_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default 1, which keeps runs bit-reproducible).
    #[arg(long, env = "IERD_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, env = "IERD_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory of training images, or a manifest file listing them.
    #[arg(long, env = "IERD_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Noise level on the 0-255 scale (noise-specific training).
    #[arg(long, env = "IERD_SIGMA", conflicts_with = "noise_agnostic")]
    pub sigma: Option<f32>,
    /// Train one model for a σ range, e.g. `0:55`.
    #[arg(long, env = "IERD_NOISE_AGNOSTIC", value_name = "LO:HI", value_parser = parse_sigma_range)]
    pub noise_agnostic: Option<(f32, f32)>,
    #[arg(long, env = "IERD_STEPS")]
    pub steps: Option<u64>,
    #[arg(long, env = "IERD_BATCH")]
    pub batch: Option<usize>,
    #[arg(long, env = "IERD_PATCH")]
    pub patch: Option<usize>,
    #[arg(long, env = "IERD_MODULES")]
    pub modules: Option<usize>,
    #[arg(long, env = "IERD_LAYERS")]
    pub layers: Option<usize>,
    /// Feature channels inside the modules.
    #[arg(long, env = "IERD_CHANNELS")]
    pub channels: Option<usize>,
    /// Train on RGB instead of grayscale images.
    #[arg(long, env = "IERD_COLOR")]
    pub color: bool,
    #[arg(long, env = "IERD_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "IERD_CHECKPOINT_EVERY")]
    pub checkpoint_every: Option<u64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, env = "IERD_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// An image file or a directory of images.
    #[arg(long, env = "IERD_INPUT")]
    pub input: Option<PathBuf>,
    /// Average the model over the eight flips and rotations.
    #[arg(long, env = "IERD_ENSEMBLE")]
    pub ensemble: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, env = "IERD_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of clean reference images, or a manifest file.
    #[arg(long, env = "IERD_CLEAN")]
    pub clean: Option<PathBuf>,
    #[arg(long, env = "IERD_SIGMA")]
    pub sigma: Option<f32>,
    #[arg(long, env = "IERD_ENSEMBLE")]
    pub ensemble: bool,
}

fn base_config(common: &CommonArgs) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if let Some(out) = &common.out {
        cfg.paths.out = Some(out.clone());
    }
    Ok(cfg)
}

macro_rules! set_if {
    ($($field:expr => $value:expr),* $(,)?) => {
        $(if let Some(v) = $value { $field = v; })*
    };
}

/// Resolves the train command's configuration: file, then environment and flags.
pub fn resolve_train(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = base_config(&args.common)?;
    set_if! {
        cfg.train.steps => args.steps,
        cfg.train.batch => args.batch,
        cfg.train.patch => args.patch,
        cfg.train.lr => args.lr,
        cfg.train.checkpoint_every => args.checkpoint_every,
        cfg.network.modules => args.modules,
        cfg.network.layers => args.layers,
        cfg.network.channels => args.channels,
    }
    if args.color {
        cfg.network.image_channels = 3;
    }
    if let Some(sigma) = args.sigma {
        cfg.noise.regime = NoiseRegime::Specific;
        cfg.noise.sigma = sigma;
    }
    if let Some((lo, hi)) = args.noise_agnostic {
        cfg.noise.regime = NoiseRegime::Agnostic;
        cfg.noise.sigma_min = lo;
        cfg.noise.sigma_max = hi;
    }
    if let Some(dataset) = &args.dataset {
        cfg.paths.dataset = Some(dataset.clone());
    }
    Ok(cfg)
}

pub fn resolve_denoise(args: &DenoiseArgs) -> CliResult<RunConfig> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    if let Some(p) = &args.input {
        cfg.paths.input = Some(p.clone());
    }
    Ok(cfg)
}

pub fn resolve_eval(args: &EvalArgs) -> CliResult<RunConfig> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    if let Some(p) = &args.clean {
        cfg.paths.clean = Some(p.clone());
    }
    if let Some(sigma) = args.sigma {
        cfg.noise.sigma = sigma;
    }
    Ok(cfg)
}

fn required(value: &Option<PathBuf>, flag: &'static str, key: &str) -> CliResult<PathBuf> {
    value
        .clone()
        .ok_or_else(|| CliError::usage(flag, format!("required (or set {key} in the config file)")))
}

fn existing(path: PathBuf, flag: &'static str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::usage(flag, format!("{} does not exist", path.display())))
    }
}

fn set_threads(threads: usize) -> CliResult<()> {
    if threads == 0 {
        return Err(CliError::usage("--threads", "must be at least 1"));
    }
    // a second call in the same process keeps the first pool
    if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
        log::debug!("global thread pool already initialized");
    }
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> CliResult<Checkpoint> {
    let path = existing(required(&cfg.paths.checkpoint, "--checkpoint", "paths.checkpoint")?, "--checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&resolve_train(&args)?, args.resume),
        Command::Denoise(args) => cmd_denoise(&resolve_denoise(&args)?, args.ensemble),
        Command::Eval(args) => cmd_eval(&resolve_eval(&args)?, args.ensemble),
    }
}

pub fn cmd_train(cfg: &RunConfig, resume: bool) -> CliResult<()> {
    set_threads(cfg.threads)?;
    let network = cfg.network()?;
    let train = cfg.train()?;
    let dataset_path = existing(required(&cfg.paths.dataset, "--dataset", "paths.dataset")?, "--dataset")?;
    let out = required(&cfg.paths.out, "--out", "paths.out")?;
    let dataset = Dataset::load(&dataset_path, network.image_channels)?;
    log::info!(
        "training {} parameters on {} images from {}",
        ierd_core::num_params(&network),
        dataset.len(),
        dataset_path.display()
    );
    cfg.echo_into(&out)?;
    let ck = train_loop(&network, &train, &dataset, &out, resume)?;
    println!(
        "trained to step {}: {} and {} in {}",
        ck.step,
        CHECKPOINT_FILE,
        METRICS_FILE,
        out.display()
    );
    Ok(())
}

fn denoise_one(
    path: &Path,
    out_dir: &Path,
    ck: &Checkpoint,
    ensemble: bool,
    opts: &DenoiseOptions,
) -> CliResult<PathBuf> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::usage("--input", format!("{} has no file name", path.display())))?;
    let target = out_dir.join(name);
    if target.canonicalize().ok() == Some(path.canonicalize().map_err(|e| CliError::io(path, e))?) {
        return Err(CliError::usage("--out", format!("would overwrite the input {}", path.display())));
    }
    let img = load_image(path)?;
    let channels = ck.config().image_channels;
    if img.channels() != channels {
        log::warn!("{}: converting {} channel(s) to {channels}", path.display(), img.channels());
    }
    let img = img.to_channels(channels)?;
    let out = if ensemble {
        self_ensemble(&img, &ck.store, opts)?
    } else {
        denoise_image(&img, &ck.store, opts)?
    };
    save_image(&out, &target)?;
    Ok(target)
}

pub fn cmd_denoise(cfg: &RunConfig, ensemble: bool) -> CliResult<()> {
    set_threads(cfg.threads)?;
    let ck = load_checkpoint(cfg)?;
    let input = existing(required(&cfg.paths.input, "--input", "paths.input")?, "--input")?;
    let out = required(&cfg.paths.out, "--out", "paths.out")?;
    let files = if input.is_dir() { list_images(&input)? } else { vec![input.clone()] };
    if files.is_empty() {
        return Err(CliError::usage("--input", format!("no images in {}", input.display())));
    }
    cfg.echo_into(&out)?;
    let opts = DenoiseOptions::default();
    let mut failed = 0;
    for file in &files {
        match denoise_one(file, &out, &ck, ensemble, &opts) {
            Ok(target) => log::info!("{} -> {}", file.display(), target.display()),
            Err(e) => {
                log::error!("{}: {e}", file.display());
                failed += 1;
            }
        }
    }
    println!(
        "denoised {} of {} images into {}{}",
        files.len() - failed,
        files.len(),
        out.display(),
        if ensemble { " (self-ensemble)" } else { "" }
    );
    if failed > 0 {
        return Err(CliError::PartialFailure { failed, total: files.len() });
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, ensemble: bool) -> CliResult<()> {
    set_threads(cfg.threads)?;
    let ck = load_checkpoint(cfg)?;
    let clean = existing(required(&cfg.paths.clean, "--clean", "paths.clean")?, "--clean")?;
    let dataset = Dataset::load(&clean, ck.config().image_channels)?;
    let images: Vec<_> = dataset.names().iter().cloned().zip(dataset.images().iter().cloned()).collect();
    let mut report = evaluate(&images, &ck.store, cfg.noise.sigma, cfg.seed, ensemble, &DenoiseOptions::default())?;
    report.checkpoint = cfg.paths.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    print!("{}", report.to_table());
    match &cfg.paths.out {
        Some(out) => {
            cfg.echo_into(out)?;
            let path = out.join(REPORT_FILE);
            std::fs::write(&path, report.to_csv()).map_err(|e| CliError::io(&path, e))?;
            println!("wrote {}", path.display());
        }
        None => print!("\n{}", report.to_csv()),
    }
    Ok(())
}
