//! Dense tanh network with optional biases and a softmax head.
//!
//! Weights are stored row-major with shape `(fan_out, fan_in)`. Hidden layers
//! apply `tanh` elementwise; the last layer emits raw logits. Without biases the
//! whole map from inputs to logits is odd, so `logits(-x) == -logits(x)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_CLASSES: usize = 10;

/// Layer widths used for the digit experiments: 64 inputs, hidden 10 and 5, 10 logits.
pub const DIGIT_ARCHITECTURE: [usize; 4] = [64, 10, 5, NUM_CLASSES];

/// Probabilities are clamped to this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `(fan_out, fan_in)`.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize, with_bias: bool) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: with_bias.then(|| vec![0.0; fan_out]),
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.fan_in + col]
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.fan_in * self.fan_out {
            return Err(Error::Shape {
                expected: self.fan_in * self.fan_out,
                actual: self.weights.len(),
            });
        }
        if let Some(b) = &self.bias {
            if b.len() != self.fan_out {
                return Err(Error::Shape {
                    expected: self.fan_out,
                    actual: b.len(),
                });
            }
        }
        Ok(())
    }

    /// `out = W x (+ b)`, no activation.
    #[inline]
    fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.fan_in..(r + 1) * self.fan_in];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            if let Some(b) = &self.bias {
                acc += b[r];
            }
            *o = acc;
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// A feed-forward network; see the module docs for the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Post-tanh outputs of every hidden layer, in order.
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl Mlp {
    /// Builds a network from explicit layers, checking that the dimensions chain
    /// and that biases are either present everywhere or nowhere.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if i > 0 && layer.fan_in != layers[i - 1].fan_out {
                return Err(Error::LayerChain {
                    layer: i,
                    fan_in: layer.fan_in,
                    previous: layers[i - 1].fan_out,
                });
            }
        }
        let with_bias = layers[0].bias.is_some();
        if layers.iter().any(|l| l.bias.is_some() != with_bias) {
            return Err(Error::Config(
                "biases must be present on every layer or on none".into(),
            ));
        }
        let mlp = Self { layers };
        mlp.check_finite()?;
        Ok(mlp)
    }

    /// Uniform `[-a, a]` initialisation with `a = 1/sqrt(fan_in)` per layer; biases start at zero.
    pub fn init(dims: &[usize], use_bias: bool, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1], use_bias);
                let a = 1.0 / (w[0] as f64).sqrt();
                for v in &mut layer.weights {
                    *v = rng.gen_range(-a..=a);
                }
                layer
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.fan_out))
            .collect()
    }

    pub fn has_bias(&self) -> bool {
        self.layers[0].bias.is_some()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Copy with the first layer's weight matrix negated: the image of `W1` under `U = -I`.
    pub fn with_negated_input_weights(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.layers[0].weights {
            *w = -*w;
        }
        out
    }

    /// All parameters flattened layer by layer: weights, then bias when present.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w = it.next().unwrap_or_default();
            }
            if let Some(b) = &mut l.bias {
                for v in b {
                    *v = it.next().unwrap_or_default();
                }
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite())
                && l.bias.as_ref().map_or(true, |b| b.iter().all(|v| v.is_finite()))
        });
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("network parameters"))
        }
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: features.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<Forward> {
        self.check_input(features)?;
        let mut ws = Workspace::new(self);
        self.forward_ws(features, &mut ws);
        let n = self.layers.len();
        Ok(Forward {
            activations: ws.outputs[..n - 1].to_vec(),
            logits: ws.outputs[n - 1].clone(),
        })
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let mut ws = Workspace::new(self);
        self.forward_ws(features, &mut ws);
        Ok(ws.outputs.pop().unwrap_or_default())
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(features)?))
    }

    /// Cross-entropy of the softmax output against `label`.
    pub fn loss(&self, features: &[f64], label: usize) -> Result<f64> {
        let probs = softmax(&self.logits(features)?)?;
        cross_entropy_loss(&probs, label)
    }

    /// Exact gradient of `cross_entropy_loss(softmax(forward(x)), label)`.
    pub fn backward(&self, features: &[f64], label: usize) -> Result<Gradients> {
        self.check_input(features)?;
        check_label(label, self.output_dim())?;
        let mut ws = Workspace::new(self);
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradient(features, label, &mut ws, &mut grads);
        Ok(grads)
    }

    /// Runs the forward pass into `ws.outputs`. Inputs must already be validated.
    pub(crate) fn forward_ws(&self, features: &[f64], ws: &mut Workspace) {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.outputs.split_at_mut(i);
            let input = if i == 0 { features } else { &before[i - 1] };
            let out = &mut after[0];
            layer.affine_into(input, out);
            if i != last {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
    }

    /// Adds this sample's gradient to `grads` and returns its loss.
    pub(crate) fn accumulate_gradient(
        &self,
        features: &[f64],
        label: usize,
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> f64 {
        self.forward_ws(features, ws);
        let last = self.layers.len() - 1;

        // dL/dlogits = softmax - onehot
        let logits = &ws.outputs[last];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &l) in ws.delta[last].iter_mut().zip(logits) {
            *d = (l - max).exp();
            z += *d;
        }
        for d in ws.delta[last].iter_mut() {
            *d /= z;
        }
        let loss = -ws.delta[last][label].max(PROB_FLOOR).ln();
        ws.delta[last][label] -= 1.0;

        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let input: &[f64] = if i == 0 { features } else { &ws.outputs[i - 1] };
            let g = &mut grads.layers[i];
            let delta = &ws.delta[i];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g.weights[r * layer.fan_in..(r + 1) * layer.fan_in];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if let Some(gb) = &mut g.bias {
                for (b, d) in gb.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            if i > 0 {
                let (head, tail) = ws.delta.split_at_mut(i);
                let prev = &mut head[i - 1];
                let delta = &tail[0];
                prev.iter_mut().for_each(|p| *p = 0.0);
                for (r, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[r * layer.fan_in..(r + 1) * layer.fan_in];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // tanh' = 1 - tanh^2
                for (p, z) in prev.iter_mut().zip(&ws.outputs[i - 1]) {
                    *p *= 1.0 - z * z;
                }
            }
        }
        loss
    }
}

/// Scratch buffers for the per-sample hot path.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub(crate) outputs: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    pub(crate) fn new(mlp: &Mlp) -> Self {
        let outputs: Vec<Vec<f64>> = mlp.layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
        Self {
            delta: outputs.clone(),
            outputs,
        }
    }

    pub(crate) fn logits(&self) -> &[f64] {
        &self.outputs[self.outputs.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Gradient record with the same shape as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            if let Some(b) = &mut l.bias {
                b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Shape {
            expected: NUM_CLASSES,
            actual: 0,
        });
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    Ok(out)
}

/// `-ln p[label]`, with `p[label]` clamped at [`PROB_FLOOR`].
pub fn cross_entropy_loss(probabilities: &[f64], label: usize) -> Result<f64> {
    check_label(label, probabilities.len())?;
    Ok(-probabilities[label].max(PROB_FLOOR).ln())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value if it is strictly smaller than every other entry.
pub fn unique_argmin(values: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    let ties = values.iter().filter(|&&v| v == values[best]).count();
    (ties == 1).then_some(best)
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes.min(NUM_CLASSES) {
        return Err(Error::Label(label));
    }
    Ok(())
}
