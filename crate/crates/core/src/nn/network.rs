use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// One layer of a feed-forward network.
///
/// Text form (used in configs): `conv5x20`, `pool2`, `fc150`, `relu`, `softmax`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    ConvValid { kernel: usize, out_maps: usize },
    MaxPool { grid: usize },
    FullyConnected { out_units: usize },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::ConvValid { .. } | LayerSpec::FullyConnected { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::ConvValid { kernel, out_maps } => write!(f, "conv{kernel}x{out_maps}"),
            LayerSpec::MaxPool { grid } => write!(f, "pool{grid}"),
            LayerSpec::FullyConnected { out_units } => write!(f, "fc{out_units}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognized layer `{s}`"));
        let num = |t: &str| t.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad);
        let s = s.trim();
        if s == "relu" {
            Ok(LayerSpec::Relu)
        } else if s == "softmax" {
            Ok(LayerSpec::Softmax)
        } else if let Some(rest) = s.strip_prefix("conv") {
            let (k, m) = rest.split_once('x').ok_or_else(bad)?;
            Ok(LayerSpec::ConvValid {
                kernel: num(k)?,
                out_maps: num(m)?,
            })
        } else if let Some(rest) = s.strip_prefix("pool") {
            Ok(LayerSpec::MaxPool { grid: num(rest)? })
        } else if let Some(rest) = s.strip_prefix("fc") {
            Ok(LayerSpec::FullyConnected {
                out_units: num(rest)?,
            })
        } else {
            Err(bad())
        }
    }
}

impl Serialize for LayerSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// A feed-forward network `f(·; W)` ending in softmax.
///
/// Parameters are stored flat as `[w0, b0, w1, b1, ...]`, one weight/bias pair
/// per parametric layer in order.
#[derive(Debug)]
pub struct Network {
    id: u64,
    version: u64,
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    /// Activation shape entering each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
    /// Index of the weight tensor in `params` for each parametric layer.
    param_slot: Vec<Option<usize>>,
    params: Vec<Tensor>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            param_slot: self.param_slot.clone(),
            params: self.params.clone(),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.params == other.params
    }
}

/// Per-sample state recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    /// `activations[i]` is the input to layer `i`; the last entry is the
    /// softmax output.
    activations: Vec<Tensor>,
    pool_index: Vec<Option<Vec<usize>>>,
    log_probs: Vec<f64>,
}

impl ForwardCache {
    /// 64-bit log-softmax of the logits.
    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn logits(&self) -> &Tensor {
        &self.activations[self.activations.len() - 2]
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub probabilities: Tensor,
    pub log_probabilities: Tensor,
    pub cache: ForwardCache,
}

/// Parameter gradients, aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Tensor>,
}

impl Gradients {
    pub fn scale(&mut self, s: f32) {
        for t in &mut self.params {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::shape("gradients", "parameter count differs"));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.axpy(1.0, b)?;
        }
        Ok(())
    }
}

impl Network {
    /// Builds a network with weights uniform on `±1/sqrt(fan_in)` and zero
    /// biases.
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>, rng: &mut RngStream) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, layers)?;
        for (i, layer) in net.layers.iter().enumerate() {
            let Some(slot) = net.param_slot[i] else { continue };
            let fan_in = match layer {
                LayerSpec::ConvValid { kernel, .. } => net.shapes[i][0] * kernel * kernel,
                _ => net.shapes[i].iter().product(),
            };
            let bound = 1.0 / (fan_in as f32).sqrt();
            for v in net.params[slot].data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    /// Builds a network with every parameter set to zero.
    pub fn zeroed(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("network input", format!("{input_shape:?}")));
        }
        match layers.iter().position(|l| *l == LayerSpec::Softmax) {
            Some(p) if p + 1 == layers.len() => {}
            _ => {
                return Err(Error::invalid(
                    "network must contain exactly one softmax, as its last layer",
                ))
            }
        }
        let mut shapes = vec![input_shape.to_vec()];
        let mut param_slot = Vec::with_capacity(layers.len());
        let mut params = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            let cur = shapes.last().unwrap().clone();
            let ctx = || format!("layer {i} ({layer})");
            let next = match *layer {
                LayerSpec::ConvValid { kernel, out_maps } => {
                    let [c, h, w] = cur[..] else {
                        return Err(Error::shape(ctx(), format!("needs [C,H,W] input, got {cur:?}")));
                    };
                    if h < kernel || w < kernel {
                        return Err(Error::shape(ctx(), format!("kernel larger than {h}x{w}")));
                    }
                    param_slot.push(Some(params.len()));
                    params.push(Tensor::zeros(&[out_maps, c, kernel, kernel]));
                    params.push(Tensor::zeros(&[out_maps]));
                    vec![out_maps, h - kernel + 1, w - kernel + 1]
                }
                LayerSpec::MaxPool { grid } => {
                    let [c, h, w] = cur[..] else {
                        return Err(Error::shape(ctx(), format!("needs [C,H,W] input, got {cur:?}")));
                    };
                    if grid == 0 || h % grid != 0 || w % grid != 0 {
                        return Err(Error::shape(ctx(), format!("grid {grid} does not divide {h}x{w}")));
                    }
                    param_slot.push(None);
                    vec![c, h / grid, w / grid]
                }
                LayerSpec::FullyConnected { out_units } => {
                    let n: usize = cur.iter().product();
                    param_slot.push(Some(params.len()));
                    params.push(Tensor::zeros(&[out_units, n]));
                    params.push(Tensor::zeros(&[out_units]));
                    vec![out_units]
                }
                LayerSpec::Relu => {
                    param_slot.push(None);
                    cur
                }
                LayerSpec::Softmax => {
                    param_slot.push(None);
                    vec![cur.iter().product()]
                }
            };
            shapes.push(next);
        }
        Ok(Self {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            input_shape,
            layers,
            shapes,
            param_slot,
            params,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    /// Activation shape entering layer `i` (`i == layers.len()` is the output).
    pub fn activation_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.params
    }

    /// Whether parameter tensor `i` is a weight (as opposed to a bias).
    pub fn is_weight(&self, i: usize) -> bool {
        i % 2 == 0
    }

    pub fn weight_mask(&self) -> Vec<bool> {
        (0..self.params.len()).map(|i| self.is_weight(i)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            params: self.params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardOutput> {
        let cache = self.forward_cache(x)?;
        let log_probabilities = Tensor::from_vec(cache.log_probs.iter().map(|&v| v as f32).collect());
        let probabilities = cache.activations.last().unwrap().clone();
        Ok(ForwardOutput {
            probabilities,
            log_probabilities,
            cache,
        })
    }

    /// Forward pass returning only the cache (which carries the 64-bit
    /// log-probabilities).
    pub fn forward_cache(&self, x: &Tensor) -> Result<ForwardCache> {
        if x.shape() != self.input_shape {
            return Err(Error::shape(
                "layer 0 input",
                format!("expected {:?}, got {:?}", self.input_shape, x.shape()),
            ));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_index = Vec::with_capacity(self.layers.len());
        let mut log_probs = Vec::new();
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = activations.last().unwrap();
            let mut idx = None;
            let next = match *layer {
                LayerSpec::ConvValid { .. } => {
                    let s = self.param_slot[i].unwrap();
                    layers::conv2d_valid(a, &self.params[s], &self.params[s + 1])
                        .map_err(|e| name_layer(e, i, layer))?
                }
                LayerSpec::MaxPool { grid } => {
                    let (out, arg) = layers::maxpool(a, grid).map_err(|e| name_layer(e, i, layer))?;
                    idx = Some(arg);
                    out
                }
                LayerSpec::FullyConnected { .. } => {
                    let s = self.param_slot[i].unwrap();
                    layers::fully_connected(a, &self.params[s], &self.params[s + 1])
                        .map_err(|e| name_layer(e, i, layer))?
                }
                LayerSpec::Relu => layers::relu(a),
                LayerSpec::Softmax => {
                    log_probs = layers::log_softmax_f64(a.data());
                    Tensor::from_vec(log_probs.iter().map(|v| v.exp() as f32).collect())
                }
            };
            activations.push(next);
            pool_index.push(idx);
        }
        Ok(ForwardCache {
            net_id: self.id,
            version: self.version,
            activations,
            pool_index,
            log_probs,
        })
    }

    /// Gradient of `-ln f_target` with respect to the logits:
    /// `probabilities - one_hot(target)`.
    pub fn logit_gradient(&self, cache: &ForwardCache, target: usize) -> Result<Tensor> {
        self.check_cache(cache)?;
        let n = self.class_count();
        if target >= n {
            return Err(Error::invalid(format!("target class {target} out of range for {n} classes")));
        }
        let mut g = cache.activations.last().unwrap().clone();
        g.data_mut()[target] -= 1.0;
        Ok(g)
    }

    /// Gradients of `-ln f_target(x; W)` for every parameter tensor.
    pub fn backward(&self, cache: &ForwardCache, target: usize) -> Result<Gradients> {
        let mut grads = self.zero_gradients();
        self.backward_accumulate(cache, target, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Network::backward`] but adds into an existing gradient buffer.
    pub fn backward_accumulate(&self, cache: &ForwardCache, target: usize, grads: &mut Gradients) -> Result<()> {
        if grads.params.len() != self.params.len() {
            return Err(Error::shape("backward", "gradient buffer does not match network"));
        }
        let mut g = self.logit_gradient(cache, target)?;
        let first_param_layer = self.param_slot.iter().position(Option::is_some);
        let last = self.layers.len() - 1;
        for i in (0..last).rev() {
            let input = &cache.activations[i];
            // No layer below needs a gradient once the first parametric layer is done.
            let want_input = first_param_layer.is_some_and(|f| i > f);
            g = match self.layers[i] {
                LayerSpec::ConvValid { .. } => {
                    let s = self.param_slot[i].unwrap();
                    let (gw, rest) = grads.params[s..].split_at_mut(1);
                    match layers::conv2d_valid_backward(input, &self.params[s], &g, &mut gw[0], &mut rest[0], want_input)? {
                        Some(gin) => gin,
                        None => break,
                    }
                }
                LayerSpec::FullyConnected { .. } => {
                    let s = self.param_slot[i].unwrap();
                    let (gw, rest) = grads.params[s..].split_at_mut(1);
                    match layers::fully_connected_backward(input, &self.params[s], &g, &mut gw[0], &mut rest[0], want_input)? {
                        Some(gin) => gin,
                        None => break,
                    }
                }
                LayerSpec::MaxPool { .. } => {
                    let arg = cache.pool_index[i].as_ref().unwrap();
                    layers::maxpool_backward(&g, arg, input.shape())?
                }
                LayerSpec::Relu => layers::relu_backward(&cache.activations[i + 1], &g),
                LayerSpec::Softmax => unreachable!("softmax is only the last layer"),
            };
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::invalid(
                "forward cache is stale or belongs to a different network",
            ));
        }
        Ok(())
    }

    pub(crate) fn from_parts(input_shape: [usize; 3], layers: Vec<LayerSpec>, params: Vec<Tensor>) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, layers)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                net.params.len(),
                params.len()
            )));
        }
        for (i, (dst, src)) in net.params.iter_mut().zip(params).enumerate() {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i}: expected shape {:?}, found {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src;
        }
        Ok(net)
    }
}

fn name_layer(e: Error, i: usize, layer: &LayerSpec) -> Error {
    match e {
        Error::Shape { context, detail } => Error::Shape {
            context: format!("layer {i} ({layer}): {context}"),
            detail,
        },
        other => other,
    }
}
