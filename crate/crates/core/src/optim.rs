//! Adam with a step-halving learning-rate schedule and decoupled weight decay.

use crate::conv::ConvParams;
use crate::error::{Error, Result};
use crate::network::ParamStore;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    /// Steps between learning-rate halvings.
    pub halving_period: u64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr: 1e-4,
            halving_period: 100_000,
            weight_decay: 1e-3,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("base_lr", self.base_lr),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::config("beta", "beta1 and beta2 must be < 1"));
        }
        if self.halving_period == 0 {
            return Err(Error::config("halving_period", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", format!("must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(step, self.base_lr, self.halving_period)
    }
}

/// `base_lr · 0.5^⌊step / halving_period⌋`.
pub fn lr_at(step: u64, base_lr: f64, halving_period: u64) -> f64 {
    let halvings = step / halving_period.max(1);
    base_lr * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    /// Completed steps.
    pub t: u64,
    pub m: Vec<ConvParams<T>>,
    pub v: Vec<ConvParams<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<ConvParams<T>> = store.specs().iter().map(ConvParams::zeros).collect();
        Ok(AdamState { config, t: 0, m: zeros.clone(), v: zeros })
    }

    pub fn check(&self, store: &ParamStore<T>) -> Result<()> {
        self.config.validate()?;
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::shape("adam moments", store.len(), self.m.len().min(self.v.len())));
        }
        for ((m, v), spec) in self.m.iter().zip(&self.v).zip(store.specs()) {
            m.check(spec)?;
            v.check(spec)?;
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> AdamState<U> {
        AdamState {
            config: self.config,
            t: self.t,
            m: self.m.iter().map(ConvParams::cast).collect(),
            v: self.v.iter().map(ConvParams::cast).collect(),
        }
    }
}

fn describe_non_finite<T: Float>(values: &[T]) -> Option<String> {
    let nan = values.iter().filter(|v| v.is_nan()).count();
    let inf = values.iter().filter(|v| v.is_infinite()).count();
    if nan + inf == 0 {
        return None;
    }
    let max_finite = values
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| v.as_f64().abs())
        .fold(0.0, f64::max);
    Some(format!("{nan} NaN, {inf} Inf of {} entries, max |finite| {max_finite:e}", values.len()))
}

/// One bias-corrected Adam update using the gradients held in `store`:
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + weight_decay·θ)`, where the bias corrections use
/// the incremented `t` and `lr = lr_at(steps completed before this one)`.
///
/// Non-finite gradients abort the step before anything is modified.
pub fn adam_step<T: Float>(store: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    state.check(store)?;
    for (id, g) in store.ids().iter().zip(store.grads()) {
        if let Some(d) = describe_non_finite(g.weight.data()) {
            return Err(Error::NonFinite(format!("weight gradient of layer {id}: {d}")));
        }
        if let Some(d) = describe_non_finite(&g.bias) {
            return Err(Error::NonFinite(format!("bias gradient of layer {id}: {d}")));
        }
    }

    let cfg = state.config;
    let lr = T::of_f64(cfg.lr_at(state.t));
    state.t += 1;
    let t = state.t;
    let b1 = T::of_f64(cfg.beta1);
    let b2 = T::of_f64(cfg.beta2);
    let one_minus_b1 = T::of_f64(1.0 - cfg.beta1);
    let one_minus_b2 = T::of_f64(1.0 - cfg.beta2);
    let exponent = t.min(i32::MAX as u64) as i32;
    let bc1 = T::of_f64(1.0 - cfg.beta1.powi(exponent));
    let bc2 = T::of_f64(1.0 - cfg.beta2.powi(exponent));
    let eps = T::of_f64(cfg.eps);
    let wd = T::of_f64(cfg.weight_decay);

    let (params, grads) = store.params_and_grads_mut();
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let moments = m.values_mut().zip(v.values_mut());
        for ((theta, &grad), (m, v)) in p.values_mut().zip(g.values()).zip(moments) {
            *m = b1 * *m + one_minus_b1 * grad;
            *v = b2 * *v + one_minus_b2 * grad * grad;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta = *theta - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
        }
    }
    Ok(())
}
