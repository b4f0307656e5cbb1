//! PSNR and SSIM on `[0, 1]` images.

use crate::data::ImagePlane;
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(a: &ImagePlane, b: &ImagePlane, op: &'static str) -> Result<()> {
    let da = (a.channels(), a.height(), a.width());
    let db = (b.channels(), b.height(), b.width());
    if da != db {
        return Err(Error::shape(op, format!("{da:?}"), format!("{db:?}")));
    }
    Ok(())
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    same_dims(a, b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(peak² / mse)`; identical images give `f64::INFINITY`.
pub fn psnr_with_peak(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// PSNR with peak 1.0, numerically equal to the 0–255 convention.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    psnr_with_peak(a, b, 1.0)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - mid).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable weighted mean over the window centred on every pixel, with the
/// window cut at the borders and renormalized over the pixels that remain.
fn local_mean(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let pass = |src: &[f64], len: usize, at: &dyn Fn(usize, usize) -> usize, lines: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..lines {
            for i in 0..len {
                let (mut acc, mut norm) = (0.0, 0.0);
                for k in -r..=r {
                    let j = i as isize + k;
                    if j < 0 || j >= len as isize {
                        continue;
                    }
                    let wk = win[(k + r) as usize];
                    acc += wk * src[at(line, j as usize)];
                    norm += wk;
                }
                out[at(line, i)] = acc / norm;
            }
        }
        out
    };
    let horizontal = pass(src, w, &|y, x| y * w + x, h);
    pass(&horizontal, h, &|x, y| y * w + x, w)
}

/// Mean SSIM over every pixel of the luma channel (RGB is converted with
/// BT.601 weights), Gaussian window 11×11 with σ = 1.5, peak 1.0.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    same_dims(a, b, "ssim")?;
    let (a, b) = (a.to_luma(), b.to_luma());
    let (h, w) = (a.height(), a.width());
    let win = gaussian_window();
    let xa: Vec<f64> = a.data().iter().map(|&v| f64::from(v)).collect();
    let xb: Vec<f64> = b.data().iter().map(|&v| f64::from(v)).collect();
    let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();
    let (mu_a, mu_b) = (local_mean(&xa, h, w, &win), local_mean(&xb, h, w, &win));
    let (e_aa, e_bb, e_ab) = (
        local_mean(&aa, h, w, &win),
        local_mean(&bb, h, w, &win),
        local_mean(&ab, h, w, &win),
    );
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let total: f64 = (0..h * w)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    Ok(total / (h * w) as f64)
}
