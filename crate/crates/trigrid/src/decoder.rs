//! Tiny MLP that maps an aggregated feature vector to a density and a
//! radiance vector. Density goes through softplus (strictly positive),
//! radiance through sigmoid (in (0,1)). Hidden activation is ReLU.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Row-major `out x in` weight matrix.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            rows,
            cols,
        }
    }

    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out[r] = acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub input_width: usize,
    pub radiance_channels: usize,
}

/// Per-sample forward state retained for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct DecoderTape {
    /// activations[0] is the input; activations[l+1] is the post-activation
    /// output of layer l (raw logits for the final layer).
    activations: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Reusable delta buffers for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct DecoderScratch {
    delta: Vec<f64>,
    next: Vec<f64>,
}

/// Gradients for every decoder parameter, laid out like the decoder itself.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub layers: Vec<Layer>,
}

impl DecoderGrads {
    pub fn zeros_like(dec: &Decoder) -> Self {
        DecoderGrads {
            layers: dec
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

pub fn softplus(x: f64) -> f64 {
    // stable for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Decoder {
    /// Build a decoder with the given hidden widths; `input_width` features
    /// in, `1 + radiance_channels` logits out.
    pub fn new(input_width: usize, hidden: &[usize], radiance_channels: usize) -> Result<Self> {
        if input_width == 0 || radiance_channels == 0 {
            return Err(Error::invalid_input("decoder widths must be positive"));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid_input("hidden widths must be positive"));
        }
        let mut widths = vec![input_width];
        widths.extend_from_slice(hidden);
        widths.push(1 + radiance_channels);
        let layers = widths
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Ok(Decoder {
            layers,
            activation: Activation::Relu,
            input_width,
            radiance_channels,
        })
    }

    /// Fan-in-scaled Gaussian init for weights, zero biases.
    pub fn init_random(&mut self, rng: &mut ChaCha8Rng) {
        for layer in &mut self.layers {
            let std = 1.0 / (layer.cols as f64).sqrt();
            for w in &mut layer.weights {
                *w = gaussian(rng) * std;
            }
            for b in &mut layer.bias {
                *b = 0.0;
            }
        }
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.rows)
            .collect()
    }

    pub fn output_width(&self) -> usize {
        1 + self.radiance_channels
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for l in &self.layers {
            if l.weights.iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(Error::invalid_state("decoder has non-finite parameters"));
            }
        }
        Ok(())
    }

    #[inline]
    fn activate(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn activate_grad(&self, preact: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if preact > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - preact.tanh() * preact.tanh(),
        }
    }

    /// Forward one feature vector; writes density to `sigma` and radiance to
    /// `radiance`, recording intermediate activations on the tape.
    pub fn decode_into(
        &self,
        features: &[f64],
        tape: &mut DecoderTape,
        radiance: &mut [f64],
    ) -> Result<f64> {
        if features.len() != self.input_width {
            return Err(Error::invalid_input(format!(
                "feature width {} != decoder input width {}",
                features.len(),
                self.input_width
            )));
        }
        if radiance.len() != self.radiance_channels {
            return Err(Error::invalid_input("radiance buffer width mismatch"));
        }
        let n_layers = self.layers.len();
        tape.activations.resize(n_layers + 1, Vec::new());
        tape.preacts.resize(n_layers, Vec::new());
        tape.activations[0].clear();
        tape.activations[0].extend_from_slice(features);
        for (l, layer) in self.layers.iter().enumerate() {
            tape.preacts[l].resize(layer.rows, 0.0);
            let (head, tail) = tape.activations.split_at_mut(l + 1);
            let input = &head[l];
            layer.forward_into(input, &mut tape.preacts[l]);
            let out = &mut tail[0];
            out.resize(layer.rows, 0.0);
            if l + 1 == n_layers {
                out.copy_from_slice(&tape.preacts[l]);
            } else {
                for (o, &z) in out.iter_mut().zip(&tape.preacts[l]) {
                    *o = self.activate(z);
                }
            }
        }
        let logits = &tape.activations[n_layers];
        let sigma = softplus(logits[0]);
        for (r, &z) in radiance.iter_mut().zip(&logits[1..]) {
            *r = sigmoid(z);
        }
        Ok(sigma)
    }

    /// Batch decode matching the one-point API.
    pub fn decode(&self, features: &[Vec<f64>]) -> Result<Vec<(f64, Vec<f64>)>> {
        self.check_finite()?;
        let mut tape = DecoderTape::default();
        features
            .iter()
            .map(|f| {
                let mut radiance = vec![0.0; self.radiance_channels];
                let sigma = self.decode_into(f, &mut tape, &mut radiance)?;
                Ok((sigma, radiance))
            })
            .collect()
    }

    /// Reverse-mode through the MLP and output activations for one sample.
    ///
    /// `d_sigma` and `d_radiance` are the upstream gradients on the activated
    /// outputs; parameter gradients accumulate into `grads` and the gradient
    /// with respect to the input features into `d_features` (overwritten).
    /// `scratch` holds the two delta buffers so the hot loop never allocates.
    pub fn decode_backward_into(
        &self,
        tape: &DecoderTape,
        sigma: f64,
        radiance: &[f64],
        d_sigma: f64,
        d_radiance: &[f64],
        grads: &mut DecoderGrads,
        d_features: &mut [f64],
        scratch: &mut DecoderScratch,
    ) -> Result<()> {
        if d_features.len() != self.input_width {
            return Err(Error::invalid_input("feature gradient width mismatch"));
        }
        let n_layers = self.layers.len();
        let logits = &tape.activations[n_layers];
        scratch.delta.clear();
        scratch.delta.resize(logits.len(), 0.0);
        // d softplus(x)/dx = sigmoid(x); recover sigmoid(x) from softplus via
        // 1 - exp(-softplus(x)) which equals sigmoid(x) exactly.
        scratch.delta[0] = d_sigma * (1.0 - (-sigma).exp());
        for c in 0..self.radiance_channels {
            let r = radiance[c];
            scratch.delta[c + 1] = d_radiance[c] * r * (1.0 - r);
        }
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &tape.activations[l];
            let g = &mut grads.layers[l];
            let delta = &mut scratch.delta;
            let d_in = &mut scratch.next;
            d_in.clear();
            d_in.resize(layer.cols, 0.0);
            for r in 0..layer.rows {
                let dz = delta[r];
                if dz != 0.0 {
                    g.bias[r] += dz;
                    let wrow = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    for c in 0..layer.cols {
                        wrow[c] += dz * input[c];
                        d_in[c] += dz * row[c];
                    }
                }
            }
            if l > 0 {
                for (di, &z) in d_in.iter_mut().zip(&tape.preacts[l - 1]) {
                    *di *= self.activate_grad(z);
                }
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.next);
        }
        d_features.copy_from_slice(&scratch.delta);
        Ok(())
    }
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms; good enough for initialization.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
