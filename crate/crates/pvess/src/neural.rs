//! Minimal dense-network substrate: tanh MLPs with exact reverse-mode
//! gradients, a diagonal Gaussian head, and an Adam optimizer.
//!
//! Everything is `f64` and parameters live in plain vectors, which keeps
//! finite-difference checks tight and checkpoints portable. Networks are
//! value-like: clone freely for parallel inference, mutate in one training
//! context.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Dense layer and MLP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

/// A single affine layer, weights row-major `[output][input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        // Xavier-uniform initialization.
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            w: (0..input * output).map(|_| rng.gen_range(-limit..limit)).collect(),
            b: vec![0.0; output],
            input,
            output,
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: vec![0.0; input * output],
            b: vec![0.0; output],
            input,
            output,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.output {
            let row = &self.w[o * self.input..(o + 1) * self.input];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward network: tanh on hidden layers, configurable output
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output_activation: Activation,
}

/// Per-layer post-activation values from a forward pass, starting with the
/// network input. Consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Structural mirror of an [`Mlp`] holding parameter gradients.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input, l.output))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for w in &mut l.w {
                *w *= factor;
            }
            for b in &mut l.b {
                *b *= factor;
            }
        }
    }
}

impl Mlp {
    /// Builds a network from layer widths, e.g. `[4, 64, 64]` for two hidden
    /// layers of 64 on a 4-wide input.
    pub fn new(widths: &[usize], output_activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            output_activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map(|l| l.input).unwrap_or(0)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(0)
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_width() {
            return Err(Error::Shape {
                expected: self.input_width(),
                got: input.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let mut buf = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(activations.last().unwrap(), &mut buf);
            let act = if i + 1 < self.layers.len() {
                Activation::Tanh
            } else {
                self.output_activation
            };
            if act == Activation::Tanh {
                for v in &mut buf {
                    *v = v.tanh();
                }
            }
            activations.push(std::mem::take(&mut buf));
        }
        Ok(ForwardCache { activations })
    }

    /// Accumulates exact gradients of a scalar loss into `grads`, given the
    /// loss gradient w.r.t. the network output. Returns the loss gradient
    /// w.r.t. the network input, for chaining through upstream networks.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Contract("stale forward cache".into()));
        }
        if grad_output.len() != self.output_width() {
            return Err(Error::Shape {
                expected: self.output_width(),
                got: grad_output.len(),
            });
        }
        let mut delta = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out_act = &cache.activations[i + 1];
            let act = if i + 1 < self.layers.len() {
                Activation::Tanh
            } else {
                self.output_activation
            };
            if act == Activation::Tanh {
                for (d, a) in delta.iter_mut().zip(out_act) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &cache.activations[i];
            let g = &mut grads.layers[i];
            for o in 0..layer.output {
                g.b[o] += delta[o];
                let row = &mut g.w[o * layer.input..(o + 1) * layer.input];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += delta[o] * xi;
                }
            }
            let mut prev = vec![0.0; layer.input];
            for o in 0..layer.output {
                let row = &layer.w[o * layer.input..(o + 1) * layer.input];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += delta[o] * wi;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn flatten_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    pub fn unflatten_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn flatten_grads(grads: &MlpGrads, out: &mut Vec<f64>) {
        for l in &grads.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    // --- checkpoint text format -------------------------------------------

    /// Serializes as portable text: a shape line per layer followed by
    /// row-major parameter values, one per line.
    pub fn write_text(&self, out: &mut String) {
        let act = match self.output_activation {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        };
        let _ = writeln!(out, "mlp {} {act}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(out, "layer {} {}", l.input, l.output);
        }
        for l in &self.layers {
            for v in l.w.iter().chain(&l.b) {
                let _ = writeln!(out, "{v:?}");
            }
        }
    }

    pub fn read_text(lines: &mut std::str::Lines<'_>) -> Result<Self> {
        let header = lines
            .next()
            .ok_or_else(|| Error::Validation("missing mlp header".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("mlp") {
            return Err(Error::Validation(format!("bad mlp header: {header}")));
        }
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Validation("bad layer count".into()))?;
        let output_activation = match parts.next() {
            Some("tanh") => Activation::Tanh,
            Some("linear") => Activation::Linear,
            other => return Err(Error::Validation(format!("bad activation: {other:?}"))),
        };
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Validation("missing layer line".into()))?;
            let mut p = line.split_whitespace();
            if p.next() != Some("layer") {
                return Err(Error::Validation(format!("bad layer line: {line}")));
            }
            let input: usize = p
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Validation("bad layer input width".into()))?;
            let output: usize = p
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Validation("bad layer output width".into()))?;
            layers.push(Dense::zeros(input, output));
        }
        for l in &mut layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Validation("truncated parameter list".into()))?;
                *v = line
                    .trim()
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad parameter value: {line}")))?;
            }
        }
        Ok(Self {
            layers,
            output_activation,
        })
    }
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian head
// ---------------------------------------------------------------------------

/// Mean from a final linear layer plus a state-independent per-dimension log
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub linear: Dense,
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(input: usize, dims: usize, init_log_std: f64, rng: &mut impl Rng) -> Self {
        Self {
            linear: Dense::new(input, dims, rng),
            log_std: vec![init_log_std; dims],
        }
    }

    pub fn mean(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.linear.apply(z, &mut out);
        out
    }
}

const LN_2PI: f64 = 1.8378770664093453;

/// Log-density of a diagonal Gaussian at `action` and its entropy.
pub fn gaussian_logprob_and_entropy(mean: &[f64], log_std: &[f64], action: &[f64]) -> (f64, f64) {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), action.len());
    let mut logp = 0.0;
    let mut entropy = 0.0;
    for i in 0..mean.len() {
        let std = log_std[i].exp();
        let z = (action[i] - mean[i]) / std;
        logp += -0.5 * z * z - log_std[i] - 0.5 * LN_2PI;
        entropy += 0.5 * (LN_2PI + 1.0) + log_std[i];
    }
    (logp, entropy)
}

/// Gradients of the log-density w.r.t. the mean and log-std vectors.
pub fn gaussian_logprob_grads(
    mean: &[f64],
    log_std: &[f64],
    action: &[f64],
    grad_mean: &mut [f64],
    grad_log_std: &mut [f64],
) {
    for i in 0..mean.len() {
        let var = (2.0 * log_std[i]).exp();
        let diff = action[i] - mean[i];
        grad_mean[i] = diff / var;
        grad_log_std[i] = diff * diff / var - 1.0;
    }
}

// ---------------------------------------------------------------------------
// Adam optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update. Rejects non-finite gradients.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam gradients"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` in place so its global L2 norm does not exceed
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads {
            *g *= scale;
        }
    }
    norm
}
