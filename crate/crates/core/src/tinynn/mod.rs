//! Fixed-architecture feed-forward network with a softmax head.
//!
//! Everything is `f64`. Layers store weights as `n_in × n_out` so a batch of
//! row vectors propagates as `X · W + b`.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{NamedTensor, NetworkCheckpoint, CHECKPOINT_FORMAT};
pub use train::{
    bc_fit, grad, grad_check, grad_check_with, loss, loss_and_grad, Batch, BcHyper, FitReport,
    GRAD_CHECK_STEP,
};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hidden width of the policy networks.
pub const HIDDEN: usize = 126;

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `n_in × n_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn n_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.weights.ncols()
    }

    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weights: Array2::zeros((n_in, n_out)),
            bias: Array1::zeros(n_out),
        }
    }
}

/// Parameters of a ReLU MLP. Also used as the container for gradients and
/// optimizer moments, which share the same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    /// Two hidden layers of [`HIDDEN`] units.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, n_out: usize) -> Self {
        Self::init_with_hidden(rng, in_dim, &[HIDDEN, HIDDEN], n_out)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_with_hidden<R: Rng + ?Sized>(
        rng: &mut R,
        in_dim: usize,
        hidden: &[usize],
        n_out: usize,
    ) -> Self {
        assert!(in_dim >= 1 && n_out >= 2, "need in_dim >= 1 and n_out >= 2");
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_out);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in(), l.n_out()))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    /// Flat views over all tensors, weights then bias per layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weights.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// SHA-256 over shapes and little-endian values; identical iff bit-identical.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update((l.n_in() as u64).to_le_bytes());
            h.update((l.n_out() as u64).to_le_bytes());
        }
        for t in self.tensors() {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::Argument(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.in_dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let mut act: Array1<f64> = ArrayView1::from(input).to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            act = act.dot(&layer.weights) + &layer.bias;
            if i < last {
                act.mapv_inplace(relu);
            }
        }
        Ok(act.to_vec())
    }

    pub fn forward_probs(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(input)?))
    }

    /// Batched forward pass; returns the pre-activations of every layer.
    pub(crate) fn forward_batch(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut z = inputs.dot(&self.layers[0].weights) + &self.layers[0].bias;
        for layer in &self.layers[1..] {
            let h = z.mapv(relu);
            pre.push(z);
            z = h.dot(&layer.weights) + &layer.bias;
        }
        pre.push(z);
        pre
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise log-softmax, in place.
pub(crate) fn log_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
}

/// `-ln p[target]`, with `p[target]` clamped to [`LOG_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(LOG_FLOOR).ln()
}
