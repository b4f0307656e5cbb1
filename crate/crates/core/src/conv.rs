//! Stride-1 dilated 2-D convolution with zero padding, forward and adjoint.
//!
//! Both passes lower each batch item to a column matrix (im2col) and run a
//! single GEMM against the `(out, in·k·k)` weight matrix. Items are processed
//! independently, so the work is split across the rayon pool; weight and bias
//! gradients are reduced in batch order afterwards, which keeps results
//! bit-identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

pub const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvLayerSpec {
    /// 3×3 layer with `padding == dilation`, which preserves spatial size.
    pub fn new(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        ConvLayerSpec {
            in_channels,
            out_channels,
            kernel: KERNEL,
            dilation,
            padding: dilation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("conv channels", "must be at least 1"));
        }
        if self.kernel != KERNEL {
            return Err(Error::config(
                "conv kernel",
                format!("only {KERNEL}x{KERNEL} kernels are supported, got {}", self.kernel),
            ));
        }
        if self.dilation == 0 {
            return Err(Error::config("conv dilation", "must be at least 1"));
        }
        if self.padding != self.dilation * (self.kernel / 2) {
            return Err(Error::config(
                "conv padding",
                format!("padding {} must equal dilation {}", self.padding, self.dilation),
            ));
        }
        Ok(())
    }

    /// Columns of the lowered weight matrix.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.fan_in() + self.out_channels
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }
}

/// Kernel and bias of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Float> ConvParams<T> {
    pub fn zeros(spec: &ConvLayerSpec) -> Self {
        ConvParams {
            weight: Tensor::zeros(spec.weight_shape()).expect("validated spec has non-zero dims"),
            bias: vec![T::zero(); spec.out_channels],
        }
    }

    /// Center-tap kernel that copies input channel `i` to output channel `i`
    /// for `i < min(in, out)`.
    pub fn identity(spec: &ConvLayerSpec) -> Self {
        let mut p = Self::zeros(spec);
        let mid = spec.kernel / 2;
        for c in 0..spec.in_channels.min(spec.out_channels) {
            p.weight.set(c, c, mid, mid, T::one());
        }
        p
    }

    pub fn check(&self, spec: &ConvLayerSpec) -> Result<()> {
        if self.weight.shape() != spec.weight_shape() {
            return Err(Error::shape("conv weight", spec.weight_shape(), self.weight.shape()));
        }
        if self.bias.len() != spec.out_channels {
            return Err(Error::shape("conv bias", spec.out_channels, self.bias.len()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    pub fn fill(&mut self, v: T) {
        self.weight.fill(v);
        self.bias.iter_mut().for_each(|b| *b = v);
    }

    pub fn cast<U: Float>(&self) -> ConvParams<U> {
        ConvParams {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|b| U::of_f64(b.as_f64())).collect(),
        }
    }

    /// Weights followed by biases.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.weight.data().iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.data_mut().iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Clone, Debug)]
pub struct ConvGradients<T = f32> {
    /// `None` when the caller did not ask for the input adjoint.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

fn check_input<T: Float>(input: &Tensor<T>, params: &ConvParams<T>, spec: &ConvLayerSpec) -> Result<()> {
    spec.validate()?;
    params.check(spec)?;
    if input.shape().c != spec.in_channels {
        return Err(Error::shape(
            "conv2d input channels",
            spec.in_channels,
            input.shape().c,
        ));
    }
    Ok(())
}

/// Lowers one `(c, h, w)` item to a `(c·k·k, h·w)` column matrix.
fn im2col<T: Float>(src: &[T], c: usize, h: usize, w: usize, dilation: usize, col: &mut [T]) {
    let plane = h * w;
    let d = dilation as isize;
    let mut row = 0;
    for ci in 0..c {
        let chan = &src[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL {
            let dy = (ky as isize - 1) * d;
            for kx in 0..KERNEL {
                let dx = (kx as isize - 1) * d;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let x0 = (-dx).clamp(0, w as isize) as usize;
                let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &chan[sy as usize * w..(sy as usize + 1) * w];
                    out_row[..x0].fill(T::zero());
                    let sx0 = (x0 as isize + dx) as usize;
                    out_row[x0..x1].copy_from_slice(&src_row[sx0..sx0 + (x1 - x0)]);
                    out_row[x1..].fill(T::zero());
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dst`.
fn col2im<T: Float>(col: &[T], c: usize, h: usize, w: usize, dilation: usize, dst: &mut [T]) {
    let plane = h * w;
    let d = dilation as isize;
    let mut row = 0;
    for ci in 0..c {
        let chan = &mut dst[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL {
            let dy = (ky as isize - 1) * d;
            for kx in 0..KERNEL {
                let dx = (kx as isize - 1) * d;
                let src = &col[row * plane..(row + 1) * plane];
                let x0 = (-dx).clamp(0, w as isize) as usize;
                let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                if x0 < x1 {
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sx0 = (x0 as isize + dx) as usize;
                        let target = &mut chan[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                        for (t, &g) in target.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                            *t = *t + g;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Same-size dilated convolution: `out[o,y,x] = b[o] + Σ w[o,i,ky,kx]·in[i, y+d(ky-1), x+d(kx-1)]`
/// with zeros outside the input.
pub fn conv2d_forward<T: Float>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    spec: &ConvLayerSpec,
) -> Result<Tensor<T>> {
    check_input(input, params, spec)?;
    let shape = input.shape();
    let out_shape = shape.with_channels(spec.out_channels);
    let mut out = Tensor::zeros(out_shape)?;
    let (plane, k) = (shape.plane_len(), spec.fan_in());
    let out_item = out_shape.item_len();
    out.data_mut()
        .par_chunks_mut(out_item)
        .enumerate()
        .for_each(|(n, dst)| {
            let mut col = vec![T::zero(); k * plane];
            im2col(input.item(n), shape.c, shape.h, shape.w, spec.dilation, &mut col);
            // outᵀ (hw×cout) = colᵀ (hw×k) · Wᵀ (k×cout)
            T::gemm(
                plane,
                k,
                spec.out_channels,
                T::one(),
                &col,
                (1, plane as isize),
                params.weight.data(),
                (1, k as isize),
                T::zero(),
                dst,
                (1, plane as isize),
            );
            for (o, row) in dst.chunks_mut(plane).enumerate() {
                let b = params.bias[o];
                row.iter_mut().for_each(|v| *v = *v + b);
            }
        });
    Ok(out)
}

/// Exact partial derivatives of `Σ grad_out ⊙ conv2d_forward(input)` with
/// respect to input, weight and bias.
pub fn conv2d_backward<T: Float>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    spec: &ConvLayerSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGradients<T>> {
    conv2d_backward_with(input, params, spec, grad_out, true)
}

/// As [`conv2d_backward`]; skips the input adjoint when `want_input` is false.
pub fn conv2d_backward_with<T: Float>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    spec: &ConvLayerSpec,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGradients<T>> {
    check_input(input, params, spec)?;
    let shape = input.shape();
    let out_shape = shape.with_channels(spec.out_channels);
    if grad_out.shape() != out_shape {
        return Err(Error::shape("conv2d_backward grad_out", out_shape, grad_out.shape()));
    }
    let (plane, k, cout) = (shape.plane_len(), spec.fan_in(), spec.out_channels);

    let per_item = |n: usize, gin: Option<&mut [T]>| -> (Vec<T>, Vec<f64>) {
        let mut col = vec![T::zero(); k * plane];
        im2col(input.item(n), shape.c, shape.h, shape.w, spec.dilation, &mut col);
        let gout = grad_out.item(n);
        let mut gw = vec![T::zero(); cout * k];
        // gw (cout×k) = gout (cout×hw) · colᵀ (hw×k)
        T::gemm(
            cout,
            plane,
            k,
            T::one(),
            gout,
            (plane as isize, 1),
            &col,
            (1, plane as isize),
            T::zero(),
            &mut gw,
            (k as isize, 1),
        );
        let gb = gout
            .chunks(plane)
            .map(|row| row.iter().map(|v| v.as_f64()).sum())
            .collect();
        if let Some(gin) = gin {
            // gcol (k×hw) = Wᵀ (k×cout) · gout (cout×hw), reusing the column buffer
            T::gemm(
                k,
                cout,
                plane,
                T::one(),
                params.weight.data(),
                (1, k as isize),
                gout,
                (plane as isize, 1),
                T::zero(),
                &mut col,
                (plane as isize, 1),
            );
            col2im(&col, shape.c, shape.h, shape.w, spec.dilation, gin);
        }
        (gw, gb)
    };

    let (grad_input, partials): (Option<Tensor<T>>, Vec<(Vec<T>, Vec<f64>)>) = if want_input {
        let mut gin = Tensor::zeros(shape)?;
        let partials = gin
            .data_mut()
            .par_chunks_mut(shape.item_len())
            .enumerate()
            .map(|(n, dst)| per_item(n, Some(dst)))
            .collect();
        (Some(gin), partials)
    } else {
        let partials = (0..shape.n).into_par_iter().map(|n| per_item(n, None)).collect();
        (None, partials)
    };

    let mut weight = Tensor::zeros(spec.weight_shape())?;
    let mut bias = vec![0.0f64; cout];
    for (gw, gb) in &partials {
        for (acc, &g) in weight.data_mut().iter_mut().zip(gw) {
            *acc = *acc + g;
        }
        for (acc, &g) in bias.iter_mut().zip(gb) {
            *acc += g;
        }
    }
    Ok(ConvGradients {
        input: grad_input,
        weight,
        bias: bias.into_iter().map(T::of_f64).collect(),
    })
}

/// He-normal weights (`std = sqrt(2 / (in·k²))`) and zero biases, deterministic per seed.
pub fn he_init<T: Float>(spec: &ConvLayerSpec, seed: u64) -> ConvParams<T> {
    let std = (2.0 / spec.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ConvParams::zeros(spec);
    for w in params.weight.data_mut() {
        *w = T::of_f64(normal.sample(&mut rng));
    }
    params
}

/// Receptive field of a chain of stride-1 convolutions: `1 + (k-1)·Σ dilations`.
pub fn receptive_field(dilations: &[usize], kernel: usize) -> usize {
    1 + (kernel - 1) * dilations.iter().sum::<usize>()
}
