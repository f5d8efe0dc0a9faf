//! Layers, forward/backward passes, and SGD for small dense networks.
//!
//! A "network" here is just `&[LayerParams]`; the model module composes
//! several of these slices (encoders, branches, heads) into one architecture
//! and routes gradients between them by hand.

use super::matrix::Matrix;
use super::KernelError;
use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Pointwise activation applied after the affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => super::losses::sigmoid(x),
        }
    }

    // Derivative in terms of pre-activation and output; the sigmoid case uses
    // the output form y(1-y) to avoid recomputing exp.
    fn deriv(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
        }
    }
}

/// One dense layer: `activation(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<LayerParams, KernelError> {
        if bias.len() != weight.rows() {
            return Err(KernelError::shape(
                "LayerParams::new",
                format!("bias of length {}", weight.rows()),
                format!("{}", bias.len()),
            ));
        }
        Ok(LayerParams { weight, bias, activation })
    }

    /// Zero-mean uniform init with fan-in scaling: weights and biases both
    /// from U(-1/sqrt(in), 1/sqrt(in)). Nonzero biases keep ReLU
    /// preactivations off exact zero even when a whole layer goes dead,
    /// which matters to finite-difference checks downstream. Draw order is
    /// weights row-major, then biases, so a given stream always produces the
    /// same layer.
    pub fn init(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> LayerParams {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let dist = Uniform::new(-bound, bound);
        let mut weight = Matrix::zeros(out_dim, in_dim);
        for v in weight.as_mut_slice() {
            *v = dist.sample(rng);
        }
        let bias: Vec<f64> = (0..out_dim).map(|_| dist.sample(rng)).collect();
        LayerParams { weight, bias, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Per-layer values saved by the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Vec<f64>,
    pub preact: Vec<f64>,
    pub output: Vec<f64>,
}

/// Forward-pass record for a stack of layers.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Output of the last layer.
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("forward cache of empty net").output
    }
}

/// Forward one layer, keeping the values backprop needs.
pub fn layer_forward(layer: &LayerParams, input: &[f64]) -> Result<LayerCache, KernelError> {
    if input.len() != layer.in_dim() {
        return Err(KernelError::shape(
            "layer_forward",
            format!("input of length {}", layer.in_dim()),
            format!("{}", input.len()),
        ));
    }
    let mut pre = layer.weight.matvec(input)?;
    for (p, b) in pre.iter_mut().zip(&layer.bias) {
        *p += b;
    }
    let out: Vec<f64> = pre.iter().map(|&p| layer.activation.apply(p)).collect();
    Ok(LayerCache {
        input: input.to_vec(),
        preact: pre,
        output: out,
    })
}

/// Backprop one layer: given d loss / d output, return the parameter
/// gradient and d loss / d input.
pub fn layer_backward(
    layer: &LayerParams,
    cache: &LayerCache,
    out_grad: &[f64],
) -> Result<(LayerGrad, Vec<f64>), KernelError> {
    if out_grad.len() != layer.out_dim() {
        return Err(KernelError::shape(
            "layer_backward",
            format!("output grad of length {}", layer.out_dim()),
            format!("{}", out_grad.len()),
        ));
    }
    let g_pre: Vec<f64> = out_grad
        .iter()
        .zip(cache.preact.iter().zip(&cache.output))
        .map(|(&gi, (&pre, &out))| gi * layer.activation.deriv(pre, out))
        .collect();
    let grad = LayerGrad {
        weight: Matrix::outer(&g_pre, &cache.input),
        bias: g_pre.clone(),
    };
    let g_in = layer.weight.matvec_t(&g_pre)?;
    Ok((grad, g_in))
}

/// Run `input` through the stack. Errors name the layer whose input width
/// didn't match.
pub fn mlp_forward(layers: &[LayerParams], input: &[f64]) -> Result<ForwardCache, KernelError> {
    if layers.is_empty() {
        return Err(KernelError::value("mlp_forward", "empty layer stack"));
    }
    let mut caches: Vec<LayerCache> = Vec::with_capacity(layers.len());
    for (idx, layer) in layers.iter().enumerate() {
        let x = caches.last().map(|c: &LayerCache| c.output.as_slice()).unwrap_or(input);
        let cache = layer_forward(layer, x).map_err(|e| match e {
            KernelError::ShapeMismatch { expected, got, .. } => KernelError::ShapeMismatch {
                context: format!("mlp_forward layer {idx}"),
                expected,
                got,
            },
            other => other,
        })?;
        caches.push(cache);
    }
    Ok(ForwardCache { layers: caches })
}

/// Gradient of one layer, same shapes as its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &LayerParams) -> LayerGrad {
        LayerGrad {
            weight: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    /// self += other * scale.
    pub fn add_scaled(&mut self, other: &LayerGrad, scale: f64) {
        for (a, b) in self.weight.as_mut_slice().iter_mut().zip(other.weight.as_slice()) {
            *a += b * scale;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b * scale;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        let w: f64 = self.weight.as_slice().iter().map(|v| v * v).sum();
        let b: f64 = self.bias.iter().map(|v| v * v).sum();
        w + b
    }
}

/// Backprop `out_grad` (d loss / d output) through the stack. Returns
/// per-layer parameter gradients and the gradient with respect to the input.
pub fn mlp_backward(
    layers: &[LayerParams],
    cache: &ForwardCache,
    out_grad: &[f64],
) -> Result<(Vec<LayerGrad>, Vec<f64>), KernelError> {
    if cache.layers.len() != layers.len() {
        return Err(KernelError::shape(
            "mlp_backward",
            format!("cache of {} layers", layers.len()),
            format!("{}", cache.layers.len()),
        ));
    }
    let last = layers.len() - 1;
    if out_grad.len() != layers[last].out_dim() {
        return Err(KernelError::shape(
            format!("mlp_backward layer {last}"),
            format!("output grad of length {}", layers[last].out_dim()),
            format!("{}", out_grad.len()),
        ));
    }
    let mut grads: Vec<LayerGrad> = layers.iter().map(LayerGrad::zeros_like).collect();
    let mut g = out_grad.to_vec();
    for idx in (0..layers.len()).rev() {
        let (grad, g_in) = layer_backward(&layers[idx], &cache.layers[idx], &g)?;
        grads[idx] = grad;
        g = g_in;
    }
    Ok((grads, g))
}

/// In-place SGD step: every parameter entry decremented by `eta * grad`.
pub fn sgd_update(layers: &mut [LayerParams], grads: &[LayerGrad], eta: f64) -> Result<(), KernelError> {
    if layers.len() != grads.len() {
        return Err(KernelError::shape(
            "sgd_update",
            format!("{} gradient entries", layers.len()),
            format!("{}", grads.len()),
        ));
    }
    for (idx, (layer, grad)) in layers.iter_mut().zip(grads).enumerate() {
        if layer.weight.rows() != grad.weight.rows()
            || layer.weight.cols() != grad.weight.cols()
            || layer.bias.len() != grad.bias.len()
        {
            return Err(KernelError::shape(
                format!("sgd_update layer {idx}"),
                format!("{}x{}", layer.weight.rows(), layer.weight.cols()),
                format!("{}x{}", grad.weight.rows(), grad.weight.cols()),
            ));
        }
        if eta == 0.0 {
            continue; // keep parameters bit-identical
        }
        for (w, g) in layer.weight.as_mut_slice().iter_mut().zip(grad.weight.as_slice()) {
            *w -= eta * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
            *b -= eta * g;
        }
    }
    Ok(())
}

/// Total number of scalar parameters in a stack.
pub fn flat_len(layers: &[LayerParams]) -> usize {
    layers.iter().map(LayerParams::param_count).sum()
}

/// Flatten a stack into one vector: per layer, weight row-major then bias.
/// The inverse is [`load_flat`]; equal hyperparameters always give equal
/// layouts, which is what makes parameter averaging across clients legal.
pub fn flatten_layers(layers: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::with_capacity(flat_len(layers));
    for layer in layers {
        out.extend_from_slice(layer.weight.as_slice());
        out.extend_from_slice(&layer.bias);
    }
    out
}

/// Overwrite a stack from a flat buffer produced by [`flatten_layers`].
pub fn load_flat(layers: &mut [LayerParams], flat: &[f64]) -> Result<(), KernelError> {
    if flat.len() != flat_len(layers) {
        return Err(KernelError::shape(
            "load_flat",
            format!("{} parameters", flat_len(layers)),
            format!("{}", flat.len()),
        ));
    }
    let mut offset = 0;
    for layer in layers {
        let w = layer.weight.as_mut_slice();
        w.copy_from_slice(&flat[offset..offset + w.len()]);
        offset += w.len();
        let b = layer.bias.len();
        layer.bias.copy_from_slice(&flat[offset..offset + b]);
        offset += b;
    }
    Ok(())
}
