//! Dense tanh network with hand-written backpropagation.
//!
//! Shared by the trainable denoiser and the evaluation classifier. Hidden
//! layers use `tanh`, the output layer is affine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GvdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// Per layer, `out × in` row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flatten()
            .for_each(|g| *g *= k);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|g| g.is_finite())
    }
}

/// Activations of every layer for one input, kept for the backward pass.
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input layer")
    }

    /// Activations of the last hidden layer (the input when there is none).
    pub fn last_hidden(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(GvdError::config(
                "layer sizes",
                format!("need >= 2 nonzero layer sizes, got {sizes:?}"),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&p[i..i + nw]);
            i += nw;
            b.copy_from_slice(&p[i..i + nb]);
            i += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|v| v.is_finite())
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_size());
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for l in 0..layers {
            let input = &acts[l];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for (o, val) in out.iter_mut().enumerate().take(n_out) {
                let row = &w[o * n_in..(o + 1) * n_in];
                *val += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        Trace { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).acts.pop().unwrap()
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output` for one input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Gradients) {
        let layers = self.weights.len();
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &trace.acts[l];
            let gw = &mut grads.weights[l];
            for o in 0..n_out {
                let d = delta[o];
                grads.biases[l][o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate().take(n_out) {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    prev.iter_mut().zip(row).for_each(|(p, wv)| *p += d * wv);
                }
                // input to layer l is tanh(h): derivative 1 - a².
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }
}

/// SGD with heavy-ball momentum: `v ← μ v + g`, `θ ← θ − η v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Gradients,
}

impl Sgd {
    pub fn new(net: &Mlp, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        let mu = self.momentum;
        let lr = self.lr;
        let layers = net.weights.iter_mut().zip(net.biases.iter_mut());
        for (l, (w, b)) in layers.enumerate() {
            for (i, p) in w.iter_mut().enumerate() {
                let v = &mut self.velocity.weights[l][i];
                *v = mu * *v + grads.weights[l][i];
                *p -= lr * *v;
            }
            for (i, p) in b.iter_mut().enumerate() {
                let v = &mut self.velocity.biases[l][i];
                *v = mu * *v + grads.biases[l][i];
                *p -= lr * *v;
            }
        }
    }
}
