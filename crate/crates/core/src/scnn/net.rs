//! The self-consistency network: four bias-free convolution layers
//! (`2nc → 16 → 8 → 16 → 2nc`, kernels 5×5, 3×3, 3×3, 5×5, ReLU after the first three).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
pub use super::conv::TapMask;
use super::conv::{conv_forward, conv_grad_input, conv_grad_weights, ConvShape};
use crate::error::{ReconError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub activation: Activation,
    pub mask: TapMask,
}

impl LayerSpec {
    pub fn shape(&self) -> ConvShape {
        ConvShape {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kh: self.kernel.0,
            kw: self.kernel.1,
            mask: self.mask,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.shape().weight_len()
    }

    /// Whether weight `w[o][i][ky][kx]` at flat index `idx` is trainable.
    fn allows_index(&self, idx: usize) -> bool {
        let (kh, kw) = self.kernel;
        let tap = idx % (kh * kw);
        self.mask.allows(tap / kw, tap % kw, kh, kw)
    }
}

/// Layer specifications plus all weights, concatenated in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    layers: Vec<LayerSpec>,
    weights: Vec<f64>,
    offsets: Vec<usize>,
}

/// Gradient buffers requested from [`NetParams::backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wants {
    pub params: bool,
    pub input: bool,
}

/// Activations retained by a forward pass for backpropagation.
pub struct ForwardCache {
    cols: Vec<Vec<f64>>,
    outputs: Vec<Tensor>,
}

/// Layer stack of the self-consistency network for `nc` coils.
pub fn self_consistency_layers(nc: usize, masking: SelfMasking) -> Vec<LayerSpec> {
    let ch = 2 * nc;
    let (first, rest) = masking.layer_masks();
    let spec = |i, o, k, a, mask| LayerSpec {
        in_channels: i,
        out_channels: o,
        kernel: (k, k),
        activation: a,
        mask,
    };
    vec![
        spec(ch, 16, 5, Activation::Relu, first),
        spec(16, 8, 3, Activation::Relu, rest),
        spec(8, 16, 3, Activation::Relu, rest),
        spec(16, ch, 5, Activation::Linear, rest),
    ]
}

/// How the network is kept from reading a location's own value when predicting it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfMasking {
    /// Zero the center taps of the first layer only.
    FirstLayerCenter,
    /// First layer reads only odd-parity offsets, later layers only even-parity offsets,
    /// so every input-to-output path has odd total offset and never returns to its origin.
    Parity,
}

impl fmt::Display for SelfMasking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelfMasking::FirstLayerCenter => "center",
            SelfMasking::Parity => "parity",
        })
    }
}

impl FromStr for SelfMasking {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(SelfMasking::FirstLayerCenter),
            "parity" => Ok(SelfMasking::Parity),
            _ => Err(ReconError::Config(format!("unknown masking '{s}' (parity, center)"))),
        }
    }
}

impl SelfMasking {
    fn layer_masks(self) -> (TapMask, TapMask) {
        match self {
            SelfMasking::FirstLayerCenter => (TapMask::Center, TapMask::None),
            SelfMasking::Parity => (TapMask::OddOffsets, TapMask::EvenOffsets),
        }
    }
}

impl NetParams {
    /// Glorot-uniform initialization, `b = sqrt(6 / (fan_in + fan_out))`, masked taps zeroed.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        for layer in &layers {
            offsets.push(weights.len());
            let (kh, kw) = layer.kernel;
            let fan_in = (layer.in_channels * kh * kw) as f64;
            let fan_out = (layer.out_channels * kh * kw) as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            for idx in 0..layer.weight_len() {
                let w = rng.random_range(-bound..bound);
                weights.push(if layer.allows_index(idx) { w } else { 0.0 });
            }
        }
        offsets.push(weights.len());
        Ok(NetParams {
            layers,
            weights,
            offsets,
        })
    }

    pub fn from_parts(layers: Vec<LayerSpec>, weights: Vec<f64>) -> Result<Self> {
        validate_layers(&layers)?;
        let mut offsets = vec![0];
        for l in &layers {
            offsets.push(offsets.last().unwrap() + l.weight_len());
        }
        if weights.len() != *offsets.last().unwrap() {
            return Err(ReconError::Shape(format!(
                "layers need {} weights, got {}",
                offsets.last().unwrap(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ReconError::Degenerate("non-finite network weight".into()));
        }
        let mut p = NetParams {
            layers,
            weights,
            offsets,
        };
        p.apply_mask();
        Ok(p)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        &self.weights[self.offsets[l]..self.offsets[l + 1]]
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().out_channels
    }

    /// Re-zeroes structurally masked taps of `values`, a buffer laid out like the weights.
    pub fn zero_masked(&self, values: &mut [f64]) {
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.mask == TapMask::None {
                continue;
            }
            let chunk = &mut values[self.offsets[l]..self.offsets[l + 1]];
            for (idx, v) in chunk.iter_mut().enumerate() {
                if !layer.allows_index(idx) {
                    *v = 0.0;
                }
            }
        }
    }

    fn apply_mask(&mut self) {
        let mut w = std::mem::take(&mut self.weights);
        self.zero_masked(&mut w);
        self.weights = w;
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels != self.in_channels() {
            return Err(ReconError::Shape(format!(
                "network expects {} channels, input has {}",
                self.in_channels(),
                x.channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (mut y, _) = conv_forward(layer.shape(), self.layer_weights(l), &act);
            if layer.activation == Activation::Relu {
                relu_in_place(&mut y.data);
            }
            act = y;
        }
        Ok(act)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = outputs.last().unwrap_or(x);
            let (mut y, c) = conv_forward(layer.shape(), self.layer_weights(l), input);
            if layer.activation == Activation::Relu {
                relu_in_place(&mut y.data);
            }
            cols.push(c);
            outputs.push(y);
        }
        let out = outputs.last().unwrap().clone();
        Ok((out, ForwardCache { cols, outputs }))
    }

    /// Reverse-mode pass from `grad_out` (gradient with respect to the network output).
    ///
    /// ReLU uses subgradient 0 at exactly 0. Masked taps receive zero gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &Tensor,
        wants: Wants,
    ) -> (Option<Vec<f64>>, Option<Tensor>) {
        let mut grad_w = wants.params.then(|| vec![0.0; self.weights.len()]);
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                for (gi, &a) in g.data.iter_mut().zip(&cache.outputs[l].data) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            if let Some(gw) = grad_w.as_mut() {
                let lw = conv_grad_weights(layer.shape(), &cache.cols[l], &g);
                gw[self.offsets[l]..self.offsets[l + 1]].copy_from_slice(&lw);
            }
            if l == 0 && !wants.input {
                return (grad_w.map(|mut gw| {
                    self.zero_masked(&mut gw);
                    gw
                }), None);
            }
            g = conv_grad_input(layer.shape(), self.layer_weights(l), &g);
        }
        if let Some(gw) = grad_w.as_mut() {
            self.zero_masked(gw);
        }
        (grad_w, Some(g))
    }

    /// One Adam update of the weights; masked taps stay exactly zero.
    pub fn adam_step(&mut self, state: &mut AdamState, grads: &[f64], lr: f64) {
        state.step(&mut self.weights, grads, lr);
        self.apply_mask();
    }
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(ReconError::Config("network needs at least one layer".into()));
    }
    for (l, layer) in layers.iter().enumerate() {
        let (kh, kw) = layer.kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(ReconError::Config(format!("layer {l}: kernel dims must be odd")));
        }
        if layer.in_channels == 0 || layer.out_channels == 0 {
            return Err(ReconError::Config(format!("layer {l}: empty channel count")));
        }
        if l > 0 && layers[l - 1].out_channels != layer.in_channels {
            return Err(ReconError::Config(format!(
                "layer {l} reads {} channels but layer {} writes {}",
                layer.in_channels,
                l - 1,
                layers[l - 1].out_channels
            )));
        }
    }
    Ok(())
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Mean-squared error of `net(input)` against `target` with gradients for the weights and the input.
pub fn backprop(params: &NetParams, input: &Tensor, target: &Tensor) -> Result<(f64, Vec<f64>, Tensor)> {
    let (out, cache) = params.forward_cached(input)?;
    let (loss, grad_out) = mse_with_grad(&out, target)?;
    let (gw, gx) = params.backward(
        &cache,
        &grad_out,
        Wants {
            params: true,
            input: true,
        },
    );
    Ok((loss, gw.unwrap(), gx.unwrap()))
}

/// `mean((out - target)^2)` and its gradient with respect to `out`.
pub fn mse_with_grad(out: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if !out.same_shape(target) {
        return Err(ReconError::Shape(format!(
            "output {} vs target {}",
            out.shape_string(),
            target.shape_string()
        )));
    }
    let n = out.data.len() as f64;
    let mut grad = out.clone();
    let mut loss = 0.0;
    for (g, &t) in grad.data.iter_mut().zip(&target.data) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(ReconError::Degenerate("non-finite loss".into()));
    }
    Ok((loss, grad))
}
