//! Independent reference implementations shared by the integration suites.
//! Nothing here calls the library's kernels; only its containers are reused.
#![allow(dead_code)]

use ierd_core::data::ImagePlane;
use ierd_core::network::{ierd_forward, ForwardTrace, LayerId, NetworkConfig, ParamStore};
use ierd_core::optim::AdamConfig;
use ierd_core::{ConvParams, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi)).unwrap()
}

/// Direct summation of the dilated cross-correlation definition.
pub fn conv_oracle(x: &Tensor<f64>, p: &ConvParams<f64>, dilation: usize, padding: usize) -> Tensor<f64> {
    let xs = x.shape();
    let ws = p.weight.shape();
    assert_eq!(ws.c, xs.c);
    let (k, d, pad) = (ws.h as isize, dilation as isize, padding as isize);
    let out_h = (xs.h as isize + 2 * pad - d * (k - 1)) as usize;
    let out_w = (xs.w as isize + 2 * pad - d * (k - 1)) as usize;
    Tensor::from_fn(Shape::new(xs.n, ws.n, out_h, out_w), |n, o, y, x_| {
        let mut acc = p.bias[o];
        for c in 0..xs.c {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = y as isize - pad + ky * d;
                    let ix = x_ as isize - pad + kx * d;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                        acc += p.weight.at(o, c, ky as usize, kx as usize) * x.at(n, c, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
    .unwrap()
}

pub fn relu(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Straight-line forward pass of the whole network built from [`conv_oracle`].
pub fn network_oracle(y: &Tensor<f64>, store: &ParamStore<f64>) -> Tensor<f64> {
    let cfg = store.config();
    let conv = |x: &Tensor<f64>, id: LayerId, dilation: usize| conv_oracle(&relu(x), store.layer(id).unwrap(), dilation, dilation);
    let mut h = if cfg.has_lift() { conv(y, LayerId::Lift, 1) } else { y.clone() };
    for module in 0..cfg.modules {
        let mut a = h.clone();
        let mut first = None;
        for (layer, &d) in cfg.dilations.iter().enumerate() {
            a = conv(&a, LayerId::Module { module, layer }, d);
            if layer == 0 {
                first = Some(a.clone());
            }
        }
        let first = first.unwrap();
        h = Tensor::from_fn(h.shape(), |n, c, yy, xx| {
            h.at(n, c, yy, xx) + a.at(n, c, yy, xx) - first.at(n, c, yy, xx)
        })
        .unwrap();
    }
    conv(&h, LayerId::Final, 1)
}

/// Adam with decoupled weight decay, executed one scalar at a time in f64.
pub struct AdamOracle {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamOracle {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        AdamOracle { cfg, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        let c = self.cfg;
        let lr = c.base_lr * 0.5f64.powi((self.t / c.halving_period) as i32);
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - c.beta1.powi(self.t as i32));
            let v_hat = self.v[i] / (1.0 - c.beta2.powi(self.t as i32));
            theta[i] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * theta[i]);
        }
    }
}

pub fn flatten<T: ierd_core::Float>(params: &[ConvParams<T>]) -> Vec<T> {
    params.iter().flat_map(|p| p.values().copied().collect::<Vec<_>>()).collect()
}

/// `(layer, flat index within the layer)` for every scalar parameter.
pub fn coordinates<T: ierd_core::Float>(store: &ParamStore<T>) -> Vec<(usize, usize)> {
    store
        .params()
        .iter()
        .enumerate()
        .flat_map(|(l, p)| (0..p.len()).map(move |i| (l, i)))
        .collect()
}

pub fn set_coordinate<T: ierd_core::Float>(store: &mut ParamStore<T>, (layer, index): (usize, usize), value: T) {
    *store.params_mut()[layer].values_mut().nth(index).unwrap() = value;
}

pub fn get_coordinate<T: ierd_core::Float>(params: &[ConvParams<T>], (layer, index): (usize, usize)) -> T {
    *params[layer].values().nth(index).unwrap()
}

/// Sign pattern of every ReLU input in a forward pass.
pub fn relu_pattern(trace: &ForwardTrace<f64>) -> Vec<bool> {
    let mut out: Vec<bool> = trace.input.data().iter().map(|&v| v > 0.0).collect();
    for m in &trace.modules {
        for t in &m.pre_activations {
            out.extend(t.data().iter().map(|&v| v > 0.0));
        }
    }
    out.extend(trace.final_input.data().iter().map(|&v| v > 0.0));
    out
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err_f64: f64,
    pub max_rel_err_f32: f64,
    pub worst: String,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()).max(1e-8))
}

/// Central differences of `⟨r, x̂(θ)⟩` in f64 against the analytic gradient in
/// both precisions. The loss is linear in `x̂` and `x̂` is piecewise linear in
/// any single parameter, so the differences are exact unless the step crosses
/// a ReLU kink; such coordinates are detected from the activation pattern and
/// replaced by fresh samples.
pub fn gradient_check(cfg: &NetworkConfig, size: usize, coords: usize, eps: f64, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::he_init(cfg, seed).unwrap();
    // nonzero biases so that bias coordinates are exercised away from zero
    for p in store.params_mut() {
        for b in &mut p.bias {
            *b = r.gen_range(-0.1..0.1);
        }
    }
    let shape = Shape::new(1, cfg.image_channels, size, size);
    let y = random_tensor(&mut r, shape, 0.0, 1.0);
    let weights = random_tensor(&mut r, shape, -1.0, 1.0);

    let (_, trace) = ierd_forward(&y, &store).unwrap();
    let base_pattern = relu_pattern(&trace);
    ierd_core::ierd_backward(&trace, &weights, &mut store).unwrap();
    let grads64 = store.grads().to_vec();

    let mut store32 = store.cast::<f32>();
    let (_, trace32) = ierd_forward(&y.cast::<f32>(), &store32).unwrap();
    ierd_core::ierd_backward(&trace32, &weights.cast::<f32>(), &mut store32).unwrap();
    let grads32 = store32.grads().to_vec();

    let all = coordinates(&store);
    let mut result = GradCheck { checked: 0, skipped_kinks: 0, max_rel_err_f64: 0.0, max_rel_err_f32: 0.0, worst: String::new() };
    let mut attempts = 0;
    while result.checked < coords {
        attempts += 1;
        assert!(attempts < 20 * coords, "too many kink crossings");
        let coord = all[r.gen_range(0..all.len())];
        let theta = get_coordinate(store.params(), coord);
        let probe = |value: f64| {
            let mut s = store.clone();
            set_coordinate(&mut s, coord, value);
            let (x_hat, t) = ierd_forward(&y, &s).unwrap();
            (x_hat.dot(&weights).unwrap(), relu_pattern(&t))
        };
        let (plus, pat_plus) = probe(theta + eps);
        let (minus, pat_minus) = probe(theta - eps);
        if pat_plus != base_pattern || pat_minus != base_pattern {
            result.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a64 = get_coordinate(&grads64, coord);
        let a32 = f64::from(get_coordinate(&grads32, coord));
        let (e64, e32) = (rel_err(a64, numeric), rel_err(a32, numeric));
        if e64 > result.max_rel_err_f64 {
            result.worst = format!("{} #{}: analytic {a64:e}, numeric {numeric:e}", store.ids()[coord.0], coord.1);
        }
        result.max_rel_err_f64 = result.max_rel_err_f64.max(e64);
        result.max_rel_err_f32 = result.max_rel_err_f32.max(e32);
        result.checked += 1;
    }
    result
}

/// Piecewise-smooth grayscale scene: a smooth background ramp with a few
/// flat-shaded rectangles and discs.
pub fn synthetic_scene(seed: u64, h: usize, w: usize) -> ImagePlane {
    let mut r = rng(seed);
    let (gy, gx, base) = (r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4), r.gen_range(0.3..0.7));
    let mut data: Vec<f32> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            (base + gy * (y - 0.5) + gx * (x - 0.5)) as f32
        })
        .collect();
    for _ in 0..r.gen_range(3..7) {
        let v: f32 = r.gen_range(0.05..0.95);
        let (cy, cx) = (r.gen_range(0..h) as f64, r.gen_range(0..w) as f64);
        let (ry, rx) = (r.gen_range(h / 10..h / 3) as f64, r.gen_range(w / 10..w / 3) as f64);
        let disc = r.gen_bool(0.5);
        for (i, px) in data.iter_mut().enumerate() {
            let (dy, dx) = (((i / w) as f64 - cy) / ry, ((i % w) as f64 - cx) / rx);
            let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
            if inside {
                *px = v;
            }
        }
    }
    let data = data.into_iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    ImagePlane::new(1, h, w, data).unwrap()
}
