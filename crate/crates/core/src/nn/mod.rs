//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Hidden layers use `tanh`, the output layer is affine. All parameters live in
//! one flat `Vec<f64>`; per layer the row-major `(out, in)` weight block comes
//! first, followed by the `out` biases. Optimizers, soft updates and
//! checkpoints all operate on that flat view.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, OptimState};
pub use checkpoint::Checkpoint;
pub(crate) use checkpoint::fmt_f64 as checkpoint_fmt;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::oracles;

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    dims: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Gradients of `<upstream, forward(input)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub param_grads: Vec<f64>,
    pub input_grad: Vec<f64>,
}

/// Reusable activation storage for one forward/backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, dims: &[usize]) {
        if self.acts.len() != dims.len() || self.acts.iter().zip(dims).any(|(a, &d)| a.len() != d) {
            self.acts = dims.iter().map(|&d| vec![0.0; d]).collect();
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Number of scalars in a network with the given layer widths.
pub fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

/// `[input, hidden; depth, output]` as a layer-width list.
pub fn layer_dims(input: usize, hidden_width: usize, depth: usize, output: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(depth + 2);
    dims.push(input);
    dims.extend(std::iter::repeat_n(hidden_width, depth));
    dims.push(output);
    dims
}

impl FeedForwardNet {
    /// All-zero network.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "a network needs at least an input and an output width".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive, got {dims:?}"
            )));
        }
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut acc = 0;
        for w in dims.windows(2) {
            offsets.push(acc);
            acc += w[1] * (w[0] + 1);
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; acc],
            offsets,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for k in 0..net.num_layers() {
            let (fan_in, fan_out) = (net.dims[k], net.dims[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in net.layer_weights_mut(k) {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Builds a network from per-layer row-major weights and biases.
    pub fn from_layers(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        check_len("weight layer count", net.num_layers(), weights.len())?;
        check_len("bias layer count", net.num_layers(), biases.len())?;
        for k in 0..net.num_layers() {
            check_len("layer weights", dims[k] * dims[k + 1], weights[k].len())?;
            check_len("layer biases", dims[k + 1], biases[k].len())?;
            net.layer_weights_mut(k).copy_from_slice(&weights[k]);
            net.layer_bias_mut(k).copy_from_slice(&biases[k]);
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated on construction")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("parameter vector", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn layer_weights(&self, k: usize) -> &[f64] {
        let start = self.offsets[k];
        &self.params[start..start + self.dims[k] * self.dims[k + 1]]
    }

    pub fn layer_weights_mut(&mut self, k: usize) -> &mut [f64] {
        let start = self.offsets[k];
        let len = self.dims[k] * self.dims[k + 1];
        &mut self.params[start..start + len]
    }

    pub fn layer_bias(&self, k: usize) -> &[f64] {
        let start = self.offsets[k] + self.dims[k] * self.dims[k + 1];
        &self.params[start..start + self.dims[k + 1]]
    }

    pub fn layer_bias_mut(&mut self, k: usize) -> &mut [f64] {
        let start = self.offsets[k] + self.dims[k] * self.dims[k + 1];
        let len = self.dims[k + 1];
        &mut self.params[start..start + len]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        self.forward_into(input, &mut tape)?;
        Ok(tape.output().to_vec())
    }

    /// Forward pass recording activations for a subsequent [`backward_into`](Self::backward_into).
    pub fn forward_into<'t>(&self, input: &[f64], tape: &'t mut Tape) -> Result<&'t [f64]> {
        check_len("network input", self.input_dim(), input.len())?;
        tape.prepare(&self.dims);
        tape.acts[0].copy_from_slice(input);
        let n = self.num_layers();
        for k in 0..n {
            let (lower, upper) = tape.acts.split_at_mut(k + 1);
            let x = &lower[k];
            let out = &mut upper[0];
            let w = self.layer_weights(k);
            let b = self.layer_bias(k);
            let fan_in = x.len();
            let hidden = k + 1 < n;
            for (i, o) in out.iter_mut().enumerate() {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                let mut s = b[i];
                for (wij, xj) in row.iter().zip(x) {
                    s += wij * xj;
                }
                *o = if hidden { s.tanh() } else { s };
            }
        }
        Ok(tape.output())
    }

    /// Reverse pass over a tape filled by `forward_into` with this network.
    ///
    /// Parameter gradients are *accumulated* into `param_grads`, so a batch can
    /// share one buffer. The input gradient, when requested, is overwritten.
    pub fn backward_into(
        &self,
        tape: &mut Tape,
        upstream: &[f64],
        param_grads: &mut [f64],
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        check_len("upstream gradient", self.output_dim(), upstream.len())?;
        check_len("parameter gradient", self.params.len(), param_grads.len())?;
        if tape.acts.len() != self.dims.len() {
            return Err(Error::Misuse("backward called before forward".into()));
        }
        let n = self.num_layers();
        let Tape {
            acts,
            delta,
            delta_prev,
        } = tape;
        delta.clear();
        delta.extend_from_slice(upstream);
        for k in (0..n).rev() {
            if k + 1 < n {
                for (d, a) in delta.iter_mut().zip(&acts[k + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let x = &acts[k];
            let fan_in = x.len();
            let w_start = self.offsets[k];
            let b_start = w_start + fan_in * delta.len();
            let (gw, rest) = param_grads[w_start..].split_at_mut(fan_in * delta.len());
            let gb = &mut rest[..delta.len()];
            debug_assert_eq!(b_start - w_start, gw.len());
            for (i, &d) in delta.iter().enumerate() {
                gb[i] += d;
                for (g, xj) in gw[i * fan_in..(i + 1) * fan_in].iter_mut().zip(x) {
                    *g += d * xj;
                }
            }
            delta_prev.clear();
            delta_prev.resize(fan_in, 0.0);
            let w = self.layer_weights(k);
            for (i, &d) in delta.iter().enumerate() {
                for (p, wij) in delta_prev.iter_mut().zip(&w[i * fan_in..(i + 1) * fan_in]) {
                    *p += wij * d;
                }
            }
            std::mem::swap(delta, delta_prev);
        }
        if let Some(out) = input_grad {
            check_len("input gradient", self.input_dim(), out.len())?;
            out.copy_from_slice(delta);
        }
        Ok(())
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradBundle> {
        let mut tape = Tape::new();
        self.forward_into(input, &mut tape)?;
        let mut param_grads = vec![0.0; self.params.len()];
        let mut input_grad = vec![0.0; self.input_dim()];
        self.backward_into(&mut tape, upstream, &mut param_grads, Some(&mut input_grad))?;
        Ok(GradBundle {
            param_grads,
            input_grad,
        })
    }
}

/// Largest relative disagreement between backprop and central differences of
/// `sum(forward(input))` over every parameter.
///
/// Each entry is `|analytic - fd| / max(|analytic|, |fd|, 1e-12)`.
pub fn grad_check(net: &FeedForwardNet, input: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let ones = vec![1.0; net.output_dim()];
    let analytic = net.backward(input, &ones)?.param_grads;
    let fd = oracles::mlp_fd_gradient(net.dims(), net.params(), input, &ones, h);
    Ok(max_relative_discrepancy(&analytic, &fd))
}

pub(crate) fn max_relative_discrepancy(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / a.abs().max(r.abs()).max(1e-12))
        .fold(0.0, f64::max)
}
