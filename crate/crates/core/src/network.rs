//! The identity-enhanced residual denoiser.
//!
//! ```text
//! y ─(ReLU→Conv lift, only when image_channels ≠ C)─► h₀
//! h_{m+1} = h_m + r_m,   r_m = chain_m(h_m) − z_{m,0}
//! x̂ = Conv_final(ReLU(h_M))
//! ```
//!
//! `chain_m` is `L` ReLU→Conv pairs and `z_{m,0}` is the output of the first
//! pair, so the module's negated skip cancels the first pair's contribution.

use std::fmt;
use std::str::FromStr;

use crate::activation::{relu_backward, relu_forward};
use crate::conv::{conv2d_backward_with, conv2d_forward, he_init, ConvLayerSpec, ConvParams, KERNEL};
use crate::data::seed::derive_seed;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Identity modules, M.
    pub modules: usize,
    /// ReLU→Conv pairs per module, L.
    pub layers: usize,
    /// Feature channels, C.
    pub channels: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub image_channels: usize,
    /// Dilation of each pair inside a module; padding always equals dilation.
    pub dilations: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::new(3, 6, 64, 1)
    }
}

impl NetworkConfig {
    /// Uses the standard schedule from [`NetworkConfig::default_dilations`].
    pub fn new(modules: usize, layers: usize, channels: usize, image_channels: usize) -> Self {
        NetworkConfig {
            modules,
            layers,
            channels,
            image_channels,
            dilations: Self::default_dilations(layers),
        }
    }

    /// First pair undilated, every later pair dilated by 3.
    pub fn default_dilations(layers: usize) -> Vec<usize> {
        (0..layers).map(|l| if l == 0 { 1 } else { 3 }).collect()
    }

    pub fn with_dilations(mut self, dilations: Vec<usize>) -> Self {
        self.dilations = dilations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.modules < 1 {
            return Err(Error::config("modules", "need at least one module"));
        }
        if self.layers < 2 {
            return Err(Error::config(
                "layers",
                "need at least two pairs per module for the negated first-pair skip",
            ));
        }
        if self.channels < 1 {
            return Err(Error::config("channels", "must be at least 1"));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::config(
                "image_channels",
                format!("must be 1 or 3, got {}", self.image_channels),
            ));
        }
        if self.dilations.len() != self.layers {
            return Err(Error::config(
                "dilations",
                format!("expected {} entries, got {}", self.layers, self.dilations.len()),
            ));
        }
        if self.dilations.contains(&0) {
            return Err(Error::config("dilations", "every dilation must be at least 1"));
        }
        Ok(())
    }

    /// True when an entry convolution lifts the image to `channels` features.
    pub fn has_lift(&self) -> bool {
        self.image_channels != self.channels
    }

    /// Every convolution in canonical (storage and checkpoint) order.
    pub fn layer_specs(&self) -> Vec<(LayerId, ConvLayerSpec)> {
        let c = self.channels;
        let mut out = Vec::with_capacity(self.modules * self.layers + 2);
        if self.has_lift() {
            out.push((LayerId::Lift, ConvLayerSpec::new(self.image_channels, c, 1)));
        }
        for module in 0..self.modules {
            for (layer, &d) in self.dilations.iter().enumerate() {
                out.push((LayerId::Module { module, layer }, ConvLayerSpec::new(c, c, d)));
            }
        }
        out.push((LayerId::Final, ConvLayerSpec::new(c, self.image_channels, 1)));
        out
    }

    /// Receptive field of a module's residual branch.
    pub fn module_receptive_field(&self) -> usize {
        crate::conv::receptive_field(&self.dilations, KERNEL)
    }

    /// Receptive field of one output pixel of the whole network.
    pub fn receptive_field(&self) -> usize {
        let dilations: Vec<usize> = self.layer_specs().iter().map(|(_, s)| s.dilation).collect();
        crate::conv::receptive_field(&dilations, KERNEL)
    }
}

/// Exact count of weight and bias scalars.
pub fn num_params(config: &NetworkConfig) -> usize {
    config.layer_specs().iter().map(|(_, s)| s.num_params()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerId {
    Lift,
    Module { module: usize, layer: usize },
    Final,
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Lift => f.write_str("lift"),
            LayerId::Module { module, layer } => write!(f, "m{module}.l{layer}"),
            LayerId::Final => f.write_str("final"),
        }
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("layer id", format!("unrecognized '{s}'"));
        match s {
            "lift" => Ok(LayerId::Lift),
            "final" => Ok(LayerId::Final),
            _ => {
                let rest = s.strip_prefix('m').ok_or_else(bad)?;
                let (m, l) = rest.split_once(".l").ok_or_else(bad)?;
                Ok(LayerId::Module {
                    module: m.parse().map_err(|_| bad())?,
                    layer: l.parse().map_err(|_| bad())?,
                })
            }
        }
    }
}

/// Parameters of every convolution plus same-shaped gradient buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    config: NetworkConfig,
    ids: Vec<LayerId>,
    specs: Vec<ConvLayerSpec>,
    params: Vec<ConvParams<T>>,
    grads: Vec<ConvParams<T>>,
    generation: u64,
}

impl<T: Float> ParamStore<T> {
    fn build(config: &NetworkConfig, mut init: impl FnMut(usize, LayerId, &ConvLayerSpec) -> ConvParams<T>) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_specs();
        let params = layers
            .iter()
            .enumerate()
            .map(|(i, (id, spec))| init(i, *id, spec))
            .collect();
        let grads = layers.iter().map(|(_, s)| ConvParams::zeros(s)).collect();
        Ok(ParamStore {
            config: config.clone(),
            ids: layers.iter().map(|(id, _)| *id).collect(),
            specs: layers.into_iter().map(|(_, s)| s).collect(),
            params,
            grads,
            generation: 0,
        })
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        Self::build(config, |_, _, spec| ConvParams::zeros(spec))
    }

    /// He-normal weights, zero biases; layer `i` draws from a seed derived from `(seed, i)`.
    pub fn he_init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::build(config, |i, _, spec| he_init(spec, derive_seed(&[seed, i as u64])))
    }

    /// Zero modules with identity lift and final kernels: maps any
    /// non-negative image to itself.
    pub fn identity(config: &NetworkConfig) -> Result<Self> {
        Self::build(config, |_, id, spec| match id {
            LayerId::Module { .. } => ConvParams::zeros(spec),
            LayerId::Lift | LayerId::Final => ConvParams::identity(spec),
        })
    }

    /// Assembles a store from parameters given in canonical order.
    pub fn from_params(config: &NetworkConfig, params: Vec<ConvParams<T>>) -> Result<Self> {
        let mut store = Self::zeros(config)?;
        if params.len() != store.params.len() {
            return Err(Error::shape("ParamStore::from_params", store.params.len(), params.len()));
        }
        for (p, spec) in params.iter().zip(&store.specs) {
            p.check(spec)?;
        }
        store.params = params;
        Ok(store)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> &[LayerId] {
        &self.ids
    }

    pub fn specs(&self) -> &[ConvLayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[ConvParams<T>] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward traces.
    pub fn params_mut(&mut self) -> &mut [ConvParams<T>] {
        self.generation += 1;
        &mut self.params
    }

    pub fn grads(&self) -> &[ConvParams<T>] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.grads
    }

    /// Parameters and gradients together, for optimizers.
    pub fn params_and_grads_mut(&mut self) -> (&mut [ConvParams<T>], &[ConvParams<T>]) {
        self.generation += 1;
        (&mut self.params, &self.grads)
    }

    pub fn index_of(&self, id: LayerId) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    pub fn layer(&self, id: LayerId) -> Option<&ConvParams<T>> {
        self.index_of(id).map(|i| &self.params[i])
    }

    pub fn grad(&self, id: LayerId) -> Option<&ConvParams<T>> {
        self.index_of(id).map(|i| &self.grads[i])
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::zero()));
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(ConvParams::len).sum()
    }

    /// Counter bumped on every mutable parameter access.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            config: self.config.clone(),
            ids: self.ids.clone(),
            specs: self.specs.clone(),
            params: self.params.iter().map(ConvParams::cast).collect(),
            grads: self.grads.iter().map(ConvParams::cast).collect(),
            generation: 0,
        }
    }

    fn module_index(&self, module: usize, layer: usize) -> usize {
        usize::from(self.config.has_lift()) + module * self.config.layers + layer
    }

    fn final_index(&self) -> usize {
        self.params.len() - 1
    }
}

/// Activations kept by [`module_forward`] for the backward pass: the input
/// of every ReLU in the residual branch (the first one is the module input).
#[derive(Clone, Debug)]
pub struct ModuleTrace<T = f32> {
    pub pre_activations: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    generation: u64,
    config: NetworkConfig,
    pub input: Tensor<T>,
    pub modules: Vec<ModuleTrace<T>>,
    /// Input of the final pre-activation (the last module's output).
    pub final_input: Tensor<T>,
}

/// One identity-mapping module: returns `y_m + (chain(y_m) − z_{m,0})`.
pub fn module_forward<T: Float>(
    y_m: &Tensor<T>,
    store: &ParamStore<T>,
    module: usize,
) -> Result<(Tensor<T>, ModuleTrace<T>)> {
    let cfg = store.config();
    if module >= cfg.modules {
        return Err(Error::config("module", format!("index {module} out of range 0..{}", cfg.modules)));
    }
    if y_m.shape().c != cfg.channels {
        return Err(Error::shape("module_forward input channels", cfg.channels, y_m.shape().c));
    }
    let mut pre_activations = Vec::with_capacity(cfg.layers);
    let mut a = y_m.clone();
    let mut first_pair = None;
    for layer in 0..cfg.layers {
        let i = store.module_index(module, layer);
        let next = conv2d_forward(&relu_forward(&a), &store.params[i], &store.specs[i])?;
        pre_activations.push(a);
        if layer == 0 {
            first_pair = Some(next.clone());
        }
        a = next;
    }
    let residual = a.sub(first_pair.as_ref().expect("layers >= 1"))?;
    let out = y_m.add(&residual)?;
    Ok((out, ModuleTrace { pre_activations }))
}

/// Full network forward pass; `x_hat` has the shape of `y`.
pub fn ierd_forward<T: Float>(y: &Tensor<T>, store: &ParamStore<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let cfg = store.config();
    if y.shape().c != cfg.image_channels {
        return Err(Error::shape("ierd_forward input channels", cfg.image_channels, y.shape().c));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("network input".into()));
    }
    let mut h = if cfg.has_lift() {
        conv2d_forward(&relu_forward(y), &store.params[0], &store.specs[0])?
    } else {
        y.clone()
    };
    let mut modules = Vec::with_capacity(cfg.modules);
    for m in 0..cfg.modules {
        let (out, trace) = module_forward(&h, store, m)?;
        modules.push(trace);
        h = out;
    }
    let fi = store.final_index();
    let x_hat = conv2d_forward(&relu_forward(&h), &store.params[fi], &store.specs[fi])?;
    Ok((
        x_hat,
        ForwardTrace {
            generation: store.generation(),
            config: cfg.clone(),
            input: y.clone(),
            modules,
            final_input: h,
        },
    ))
}

/// Inference-only forward pass; keeps no activations beyond the current module.
pub fn ierd_predict<T: Float>(y: &Tensor<T>, store: &ParamStore<T>) -> Result<Tensor<T>> {
    let cfg = store.config();
    if y.shape().c != cfg.image_channels {
        return Err(Error::shape("ierd_predict input channels", cfg.image_channels, y.shape().c));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("network input".into()));
    }
    let mut h = if cfg.has_lift() {
        conv2d_forward(&relu_forward(y), &store.params[0], &store.specs[0])?
    } else {
        y.clone()
    };
    for m in 0..cfg.modules {
        h = module_forward(&h, store, m)?.0;
    }
    let fi = store.final_index();
    conv2d_forward(&relu_forward(&h), &store.params[fi], &store.specs[fi])
}

/// Reverse pass: overwrites every gradient buffer in `store` with
/// `∂⟨grad_x_hat, x̂⟩/∂w` and returns the gradient with respect to the input.
pub fn ierd_backward<T: Float>(
    trace: &ForwardTrace<T>,
    grad_x_hat: &Tensor<T>,
    store: &mut ParamStore<T>,
) -> Result<Tensor<T>> {
    if trace.config != store.config {
        return Err(Error::TraceMismatch("trace was produced by a different network config".into()));
    }
    if trace.generation != store.generation {
        return Err(Error::TraceMismatch(format!(
            "parameters changed since the forward pass (generation {} vs {})",
            trace.generation, store.generation
        )));
    }
    if grad_x_hat.shape() != trace.input.shape() {
        return Err(Error::shape("ierd_backward grad_x_hat", trace.input.shape(), grad_x_hat.shape()));
    }
    let cfg = store.config.clone();

    let fi = store.final_index();
    let g = conv2d_backward_with(
        &relu_forward(&trace.final_input),
        &store.params[fi],
        &store.specs[fi],
        grad_x_hat,
        true,
    )?;
    store.grads[fi] = ConvParams { weight: g.weight, bias: g.bias };
    let mut grad_h = relu_backward(&trace.final_input, &g.input.expect("requested"))?;

    for m in (0..cfg.modules).rev() {
        let pre = &trace.modules[m].pre_activations;
        // grad w.r.t. the output of pair `layer`; the chain end receives grad_h
        let mut grad_a = grad_h.clone();
        for layer in (0..cfg.layers).rev() {
            if layer == 0 {
                // the first pair's output also feeds the negated skip
                grad_a.sub_assign(&grad_h)?;
            }
            let i = store.module_index(m, layer);
            let g = conv2d_backward_with(&relu_forward(&pre[layer]), &store.params[i], &store.specs[i], &grad_a, true)?;
            store.grads[i] = ConvParams { weight: g.weight, bias: g.bias };
            grad_a = relu_backward(&pre[layer], &g.input.expect("requested"))?;
        }
        // identity branch plus residual branch
        grad_h.add_assign(&grad_a)?;
    }

    if cfg.has_lift() {
        let g = conv2d_backward_with(&relu_forward(&trace.input), &store.params[0], &store.specs[0], &grad_h, true)?;
        store.grads[0] = ConvParams { weight: g.weight, bias: g.bias };
        grad_h = relu_backward(&trace.input, &g.input.expect("requested"))?;
    }
    Ok(grad_h)
}
