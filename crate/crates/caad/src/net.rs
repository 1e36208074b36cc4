//! Minimal dense-network engine: forward pass, exact backpropagation,
//! seeded He-style initialization.
//!
//! Only the fixed computation graphs used by the scoring and confidence
//! heads are supported; this is not a general autodiff library. All
//! parameters are `f64` so trained weights round-trip bit-exactly
//! through checkpoints.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative as a function of the pre-activation. Relu at exactly 0
    /// uses subgradient 0.
    #[inline]
    pub fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer: `y = activation(W x + b)` with row-major `W`
/// of shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    /// He-style uniform init: weights ~ U(±sqrt(6 / in_dim)), zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Layer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeroed(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Layer {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Per-sample activations recorded by [`DenseNet::forward`], consumed by
/// [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activations per layer.
    zs: Vec<Vec<f64>>,
    /// Post-activations per layer; the last entry is the net output.
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().unwrap_or(&self.input)
    }

    /// Smallest |pre-activation| seen in the pass. Finite-difference
    /// checks use this to skip samples sitting near a relu kink, where
    /// central differences disagree with the subgradient convention.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.zs
            .iter()
            .flatten()
            .map(|z| z.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gradients shaped exactly like a [`DenseNet`]'s parameters.
#[derive(Debug, Clone)]
pub struct NetGradients {
    pub layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

impl NetGradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    d_weights: vec![0.0; l.weights.len()],
                    d_bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`. Used to average per-sample gradients
    /// over a batch.
    pub fn add_scaled(&mut self, other: &NetGradients, scale: f64) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.d_weights.iter_mut().zip(&b.d_weights) {
                *x += scale * y;
            }
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for x in &mut l.d_weights {
                *x *= s;
            }
            for x in &mut l.d_bias {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.d_weights.iter().all(|x| x.is_finite()) && l.d_bias.iter().all(|x| x.is_finite())
        })
    }

    /// Gradient buffers in the same fixed order as
    /// [`DenseNet::param_slices`].
    pub fn grad_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.d_weights.as_slice(), l.d_bias.as_slice()])
            .collect()
    }
}

impl DenseNet {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut prev = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != prev {
                return Err(Error::DimMismatch {
                    context: "layer chaining",
                    expected: prev,
                    actual: l.in_dim,
                });
            }
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} parameter buffers do not match its dims"
                )));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|w| w.is_finite()) {
                return Err(Error::NonFinite("layer parameters"));
            }
            prev = l.out_dim;
        }
        Ok(DenseNet { input_dim, layers })
    }

    /// Builds a seeded net from `(width, activation)` specs.
    pub fn init(input_dim: usize, spec: &[(usize, Activation)], rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut prev = input_dim;
        for &(width, act) in spec {
            layers.push(Layer::init(prev, width, act, rng));
            prev = width;
        }
        DenseNet::new(input_dim, layers)
    }

    pub fn zeroed(input_dim: usize, spec: &[(usize, Activation)]) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut prev = input_dim;
        for &(width, act) in spec {
            layers.push(Layer::zeroed(prev, width, act));
            prev = width;
        }
        DenseNet::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.out_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Disjoint views of every parameter buffer, in a fixed order
    /// (weights then bias, layer by layer). Optimizers and checkpoints
    /// rely on this order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Layer { weights, bias, .. } = l;
                [weights.as_mut_slice(), bias.as_mut_slice()]
            })
            .collect()
    }

    /// Little-endian byte dump of all parameters. Two nets with equal
    /// dumps compute identical functions; used by freeze tests and
    /// checkpoint round-trips.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * 8);
        for s in self.param_slices() {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch {
                context: "net input",
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("net input"));
        }
        Ok(())
    }

    /// Forward pass recording the activations needed by [`backward`].
    ///
    /// [`backward`]: DenseNet::backward
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let input: &[f64] = if li == 0 { x } else { &outputs[li - 1] };
            let mut z = layer.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = *zo;
                for (w, v) in row.iter().zip(input) {
                    acc += w * v;
                }
                *zo = acc;
            }
            let out: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            zs.push(z);
            outputs.push(out);
        }
        Ok(ForwardCache {
            input: x.to_vec(),
            zs,
            outputs,
        })
    }

    /// Forward pass without a cache, for inference.
    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(x)?;
        Ok(match cache.outputs.into_iter().next_back() {
            Some(out) => out,
            None => cache.input,
        })
    }

    /// Backpropagates `upstream` (dL/d output) through the cached pass.
    /// Returns parameter gradients and the gradient w.r.t. the net
    /// input, which joint training feeds into the shared extractor.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<(NetGradients, Vec<f64>)> {
        let mut grads = NetGradients::zeros_like(self);
        let d_input = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, d_input))
    }

    /// Like [`backward`], but accumulates (`+=`) into an existing
    /// gradient buffer. Batch loops pre-scale `upstream` by the batch
    /// weight and call this per sample, so the buffer ends up holding
    /// the mean-loss gradient without per-sample allocations.
    ///
    /// [`backward`]: DenseNet::backward
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut NetGradients,
    ) -> Result<Vec<f64>> {
        if cache.zs.len() != self.layers.len() || cache.input.len() != self.input_dim {
            return Err(Error::DimMismatch {
                context: "backward cache",
                expected: self.layers.len(),
                actual: cache.zs.len(),
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimMismatch {
                context: "upstream gradient",
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::DimMismatch {
                context: "gradient buffer",
                expected: self.layers.len(),
                actual: grads.layers.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.zs[i];
            if z.len() != layer.out_dim {
                return Err(Error::DimMismatch {
                    context: "backward cache",
                    expected: layer.out_dim,
                    actual: z.len(),
                });
            }
            let input: &[f64] = if i == 0 {
                &cache.input
            } else {
                &cache.outputs[i - 1]
            };
            let g = &mut grads.layers[i];
            let mut delta_prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let dz = delta[o] * layer.activation.grad(z[o]);
                // Dead relu rows contribute nothing.
                if dz == 0.0 {
                    continue;
                }
                g.d_bias[o] += dz;
                let row = o * layer.in_dim;
                let w_row = &layer.weights[row..row + layer.in_dim];
                let g_row = &mut g.d_weights[row..row + layer.in_dim];
                for j in 0..layer.in_dim {
                    g_row[j] += dz * input[j];
                    delta_prev[j] += w_row[j] * dz;
                }
            }
            delta = delta_prev;
        }
        Ok(delta)
    }
}
