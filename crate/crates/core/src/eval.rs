//! Whole-image denoising, the eight-way geometric self-ensemble, and
//! dataset evaluation reports.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{add_awgn, derive_seed, GeometricTransform, ImagePlane};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::network::{ierd_predict, ParamStore};
use crate::tensor::{Shape, Tensor};

const EVAL_STREAM: u64 = 0x4556_414C; // "EVAL"

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiseOptions {
    /// Images with more pixels than this are processed tile by tile.
    pub max_untiled_pixels: usize,
    pub tile: usize,
    /// Lower bound on the context margin around each tile; the margin is
    /// raised to the network's receptive radius when that is larger.
    pub min_overlap: usize,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        DenoiseOptions {
            max_untiled_pixels: 512 * 512,
            tile: 256,
            min_overlap: 48,
        }
    }
}

fn check_channels(img: &ImagePlane, store: &ParamStore<f32>) -> Result<()> {
    let want = store.config().image_channels;
    if img.channels() != want {
        return Err(Error::shape("denoise image channels", want, img.channels()));
    }
    Ok(())
}

/// Unclamped network output for a single-item tensor, tiling when it is large.
pub fn predict(y: &Tensor<f32>, store: &ParamStore<f32>, opts: &DenoiseOptions) -> Result<Tensor<f32>> {
    if y.shape().plane_len() > opts.max_untiled_pixels {
        predict_tiled(y, store, opts)
    } else {
        ierd_predict(y, store)
    }
}

/// Runs the network on overlapping tiles and stitches their centres. With a
/// margin at least the receptive radius, every output pixel sees exactly the
/// context it would see in a whole-image pass.
pub fn predict_tiled(y: &Tensor<f32>, store: &ParamStore<f32>, opts: &DenoiseOptions) -> Result<Tensor<f32>> {
    let s = y.shape();
    if s.n != 1 {
        return Err(Error::shape("predict_tiled batch", 1, s.n));
    }
    let radius = (store.config().receptive_field() - 1) / 2;
    let overlap = opts.min_overlap.max(radius);
    let core = opts.tile.saturating_sub(2 * overlap).max(16);
    let mut out = Tensor::zeros(Shape::new(1, store.config().image_channels, s.h, s.w))?;
    for y0 in (0..s.h).step_by(core) {
        for x0 in (0..s.w).step_by(core) {
            let (y1, x1) = ((y0 + core).min(s.h), (x0 + core).min(s.w));
            let (ty0, tx0) = (y0.saturating_sub(overlap), x0.saturating_sub(overlap));
            let (ty1, tx1) = ((y1 + overlap).min(s.h), (x1 + overlap).min(s.w));
            let tile = Tensor::from_fn(Shape::new(1, s.c, ty1 - ty0, tx1 - tx0), |_, c, ty, tx| {
                y.at(0, c, ty0 + ty, tx0 + tx)
            })?;
            let pred = ierd_predict(&tile, store)?;
            for c in 0..out.shape().c {
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        out.set(0, c, yy, xx, pred.at(0, c, yy - ty0, xx - tx0));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Single forward pass; output clamped to `[0, 1]`.
pub fn denoise_image(img: &ImagePlane, store: &ParamStore<f32>, opts: &DenoiseOptions) -> Result<ImagePlane> {
    check_channels(img, store)?;
    let out = predict(&img.to_tensor(), store, opts)?;
    Ok(ImagePlane::from_tensor(&out)?.clamped())
}

/// `(1/8)·Σ Γᵢ⁻¹(net(Γᵢ(y)))` over the dihedral group, then clamped.
pub fn self_ensemble(img: &ImagePlane, store: &ParamStore<f32>, opts: &DenoiseOptions) -> Result<ImagePlane> {
    check_channels(img, store)?;
    let y = img.to_tensor();
    // f64 accumulation makes the eight-term sum exact for equal terms
    let mut acc = vec![0.0f64; y.len()];
    for t in GeometricTransform::all() {
        let out = t.invert(&predict(&t.apply(&y), store, opts)?);
        for (a, &v) in acc.iter_mut().zip(out.data()) {
            *a += f64::from(v);
        }
    }
    let mean: Vec<f32> = acc.into_iter().map(|v| (v / 8.0) as f32).collect();
    Ok(ImagePlane::new(img.channels(), img.height(), img.width(), mean)?.clamped())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim_noisy: f64,
    pub ssim_denoised: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub checkpoint: String,
    pub network: String,
    pub sigma: f32,
    pub seed: u64,
    pub ensemble: bool,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { f64::NAN } else { sum / n as f64 }
}

impl EvalReport {
    pub fn mean_psnr_noisy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_noisy))
    }

    pub fn mean_psnr_denoised(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_denoised))
    }

    pub fn mean_ssim_noisy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_noisy))
    }

    pub fn mean_ssim_denoised(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_denoised))
    }

    /// `image,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised`; timing is
    /// left out so the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.image, r.psnr_noisy, r.psnr_denoised, r.ssim_noisy, r.ssim_denoised
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.image.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "checkpoint {} | {} | sigma {} | seed {} | {}",
            self.checkpoint,
            self.network,
            self.sigma,
            self.seed,
            if self.ensemble { "self-ensemble" } else { "single pass" }
        );
        let _ = writeln!(
            s,
            "{:<width$}  {:>11}  {:>14}  {:>10}  {:>13}  {:>8}",
            "image", "psnr_noisy", "psnr_denoised", "ssim_noisy", "ssim_denoised", "seconds"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>11.4}  {:>14.4}  {:>10.4}  {:>13.4}  {:>8.3}",
                r.image, r.psnr_noisy, r.psnr_denoised, r.ssim_noisy, r.ssim_denoised, r.seconds
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>11.4}  {:>14.4}  {:>10.4}  {:>13.4}  {:>8.3}",
            "mean",
            self.mean_psnr_noisy(),
            self.mean_psnr_denoised(),
            self.mean_ssim_noisy(),
            self.mean_ssim_denoised(),
            mean(self.rows.iter().map(|r| r.seconds))
        );
        s
    }
}

/// Noisy copy of image `index` of an evaluation set, reproducible from `(seed, index)`.
pub fn synthesize_noisy(clean: &ImagePlane, sigma: f32, seed: u64, index: usize) -> ImagePlane {
    let noisy = add_awgn(&clean.to_tensor(), sigma, derive_seed(&[seed, EVAL_STREAM, index as u64]));
    ImagePlane::from_tensor(&noisy).expect("same shape as the clean image")
}

/// Adds σ-noise to every clean image, denoises it and scores both versions.
/// Noisy PSNR/SSIM use the unclamped network input; denoised outputs are clamped.
pub fn evaluate(
    images: &[(String, ImagePlane)],
    store: &ParamStore<f32>,
    sigma: f32,
    seed: u64,
    ensemble: bool,
    opts: &DenoiseOptions,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(images.len());
    for (index, (name, clean)) in images.iter().enumerate() {
        check_channels(clean, store)?;
        let noisy = synthesize_noisy(clean, sigma, seed, index);
        let start = Instant::now();
        let denoised = if ensemble {
            self_ensemble(&noisy, store, opts)?
        } else {
            denoise_image(&noisy, store, opts)?
        };
        let seconds = start.elapsed().as_secs_f64();
        rows.push(EvalRow {
            image: name.clone(),
            psnr_noisy: psnr(&noisy, clean)?,
            psnr_denoised: psnr(&denoised, clean)?,
            ssim_noisy: ssim(&noisy, clean)?,
            ssim_denoised: ssim(&denoised, clean)?,
            seconds,
        });
    }
    let cfg = store.config();
    Ok(EvalReport {
        rows,
        checkpoint: String::new(),
        network: format!("M={} L={} C={} channels={}", cfg.modules, cfg.layers, cfg.channels, cfg.image_channels),
        sigma,
        seed,
        ensemble,
    })
}
