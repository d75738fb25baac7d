//! Small fully-connected network with reverse-mode gradients.
//!
//! The network maps an `n x d_in` batch to an `n x d_out` batch. Backward
//! passes return gradients of `<upstream, forward(x)>` with respect to every
//! weight, every bias, and every input entry; attacks differentiate through
//! the inputs, trainers through the parameters, so both paths are first-class.
//!
//! Hidden layers use softplus so that gradients stay smooth everywhere; the
//! final layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Softplus,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            // Overflow-safe softplus: ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|).
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Linear => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            // d/dx softplus = sigmoid(x)
            Activation::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer: `y = act(x W^T + b)` with `weights` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, with shapes mirroring [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            bias: params.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_scaled(b, scale);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Activations cached by a forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    /// Pre-activation values of each layer.
    preacts: Vec<Matrix>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl MlpParams {
    /// Fully-connected net over the given widths: `widths[0]` is the input
    /// dimension, the last entry the output dimension. Hidden layers get
    /// softplus, the final layer is linear. Weights are drawn uniformly from
    /// `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("network needs at least input and output widths"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::config("layer widths must be >= 1"));
        }
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Matrix::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.gen_range(-a..a);
            }
            let activation = if l + 1 == n_layers {
                Activation::Linear
            } else {
                Activation::Softplus
            };
            layers.push(Layer {
                weights: w,
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        Ok(MlpParams { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dimension(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass without caching; one output row per input row.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n = x.rows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut pre = Matrix::zeros(n, layer.out_dim());
            for i in 0..n {
                let xi = cur.row(i);
                let pi = pre.row_mut(i);
                for (o, p) in pi.iter_mut().enumerate() {
                    *p = layer.bias[o] + super::matrix::dot(layer.weights.row(o), xi);
                }
            }
            let mut post = Matrix::zeros(n, layer.out_dim());
            for (dst, &src) in post.data_mut().iter_mut().zip(pre.data()) {
                *dst = layer.activation.apply(src);
            }
            inputs.push(cur);
            preacts.push(pre);
            cur = post;
        }
        Ok(ForwardCache {
            inputs,
            preacts,
            output: cur,
        })
    }

    /// Gradients of `<upstream, forward(x)>` with respect to parameters and
    /// inputs, reusing a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let out = &cache.output;
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::dimension(format!(
                "upstream is {}x{}, forward output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let n = out.rows();
        let mut grads = MlpGrads::zeros_like(self);
        // delta holds d<upstream, y> / d preact of the current layer.
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[l];
            for (d, &p) in delta.data_mut().iter_mut().zip(pre.data()) {
                *d *= layer.activation.derivative(p);
            }
            let input = &cache.inputs[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.bias[l];
            for i in 0..n {
                let di = delta.row(i);
                let xi = input.row(i);
                for (o, &dio) in di.iter().enumerate() {
                    gb[o] += dio;
                    let gw_row = gw.row_mut(o);
                    for (k, &xik) in xi.iter().enumerate() {
                        gw_row[k] += dio * xik;
                    }
                }
            }
            // Propagate to the layer input: prev_delta = delta W.
            let mut prev = Matrix::zeros(n, layer.in_dim());
            for i in 0..n {
                let di = delta.row(i);
                let pi = prev.row_mut(i);
                for (o, &dio) in di.iter().enumerate() {
                    if dio != 0.0 {
                        let wrow = layer.weights.row(o);
                        for (k, &w) in wrow.iter().enumerate() {
                            pi[k] += dio * w;
                        }
                    }
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// One-shot forward + backward.
    pub fn grad(&self, x: &Matrix, upstream: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let cache = self.forward_cached(x)?;
        self.backward(&cache, upstream)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters back from the flat layout written by `flatten_into`.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        off
    }
}

impl MlpGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }
}
