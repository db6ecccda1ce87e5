//! Cross-entropy behavioral cloning: loss, backpropagation, mini-batch Adam,
//! and a central-difference gradient check.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, log_softmax_rows, AdamConfig, AdamState, MlpParams, LOG_FLOOR};
use crate::error::{Error, Result};

/// Supervised `(input, class)` pairs stored as a dense row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    targets: Vec<usize>,
}

impl Batch {
    pub fn new(rows: &[Vec<f64>], targets: Vec<usize>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::Argument(format!(
                "{} inputs but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Argument("ragged input rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let inputs = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| Error::Argument(e.to_string()))?;
        Ok(Self { inputs, targets })
    }

    pub fn from_matrix(inputs: Array2<f64>, targets: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::Argument(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        Ok(Self {
            inputs: inputs.as_standard_layout().into_owned(),
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), rows),
            targets: rows.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    fn check(&self, params: &MlpParams) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if self.dim() != params.in_dim() {
            return Err(Error::Argument(format!(
                "batch has {} features, network expects {}",
                self.dim(),
                params.in_dim()
            )));
        }
        let n_out = params.out_dim();
        if let Some(t) = self.targets.iter().find(|&&t| t >= n_out) {
            return Err(Error::Argument(format!("target {t} outside 0..{n_out}")));
        }
        Ok(())
    }
}

/// Mean cross-entropy of `params` on `batch`.
pub fn loss(params: &MlpParams, batch: &Batch) -> Result<f64> {
    batch.check(params)?;
    let mut logp = params
        .forward_batch(&batch.inputs)
        .pop()
        .expect("at least one layer");
    log_softmax_rows(&mut logp);
    Ok(mean_nll(&logp, &batch.targets))
}

fn mean_nll(logp: &Array2<f64>, targets: &[usize]) -> f64 {
    let cap = -LOG_FLOOR.ln();
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| (-logp[[i, t]]).min(cap))
        .sum();
    total / targets.len() as f64
}

/// Exact gradient of the mean cross-entropy, by backpropagation.
pub fn grad(params: &MlpParams, batch: &Batch) -> Result<MlpParams> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}

pub fn loss_and_grad(params: &MlpParams, batch: &Batch) -> Result<(f64, MlpParams)> {
    batch.check(params)?;
    let mut pre = params.forward_batch(&batch.inputs);
    let mut dz = pre.pop().expect("at least one layer");
    log_softmax_rows(&mut dz);
    let loss = mean_nll(&dz, &batch.targets);

    // d(mean NLL)/d(logits) = (softmax - onehot) / n. Rows whose loss sits on
    // the clamp contribute nothing.
    let n = batch.len() as f64;
    let cap = -LOG_FLOOR.ln();
    for (i, mut row) in dz.axis_iter_mut(Axis(0)).enumerate() {
        let t = batch.targets[i];
        if -row[t] >= cap {
            row.fill(0.0);
            continue;
        }
        row.mapv_inplace(|lp| lp.exp() / n);
        row[t] -= 1.0 / n;
    }

    let mut g = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let grad_w = if l == 0 {
            batch.inputs.t().dot(&dz)
        } else {
            pre[l - 1].mapv(|v| v.max(0.0)).t().dot(&dz)
        };
        g.layers[l].bias = dz.sum_axis(Axis(0));
        g.layers[l].weights = grad_w;
        if l > 0 {
            let mut upstream = dz.dot(&params.layers[l].weights.t());
            upstream.zip_mut_with(&pre[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = upstream;
        }
    }
    Ok((loss, g))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for BcHyper {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: usize,
    /// Mean mini-batch loss over the last epoch, if any epoch ran.
    pub final_loss: Option<f64>,
}

/// Mini-batch Adam on the cross-entropy loss with a fresh shuffle each epoch.
pub fn bc_fit<R: Rng + ?Sized>(
    data: &Batch,
    params: &mut MlpParams,
    adam: &mut AdamState,
    epochs: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::Argument("behavioral cloning needs a non-empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    data.check(params)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = FitReport::default();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(batch_size) {
            let mb = data.select(chunk);
            let (l, g) = loss_and_grad(params, &mb)?;
            adam_step(params, &g, adam)?;
            weighted += l * chunk.len() as f64;
            report.steps += 1;
        }
        report.final_loss = Some(weighted / data.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameters diverged during fitting".into()));
    }
    Ok(report)
}

/// Step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-6;

/// Largest relative disagreement between backprop and central differences:
/// `|a - n| / max(|a|, |n|, 1e-8)` over every parameter.
pub fn grad_check(params: &MlpParams, batch: &Batch) -> Result<f64> {
    let analytic = grad(params, batch)?;
    grad_check_with(params, batch, &analytic)
}

/// Same as [`grad_check`] but against a caller-supplied gradient.
pub fn grad_check_with(params: &MlpParams, batch: &Batch, analytic: &MlpParams) -> Result<f64> {
    if !params.same_shape(analytic) {
        return Err(Error::Argument("gradient shape differs from parameters".into()));
    }
    let h = GRAD_CHECK_STEP;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let n_tensors = params.tensors().count();
    for ti in 0..n_tensors {
        let len = params.tensors().nth(ti).expect("tensor index").len();
        for j in 0..len {
            let orig = slot(&mut probe, ti, j, None);
            slot(&mut probe, ti, j, Some(orig + h));
            let up = loss(&probe, batch)?;
            slot(&mut probe, ti, j, Some(orig - h));
            let down = loss(&probe, batch)?;
            slot(&mut probe, ti, j, Some(orig));
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.tensors().nth(ti).expect("tensor index")[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Reads (and optionally overwrites) one scalar parameter; returns the old value.
fn slot(p: &mut MlpParams, tensor: usize, idx: usize, set: Option<f64>) -> f64 {
    let t = p.tensors_mut().nth(tensor).expect("tensor index");
    let old = t[idx];
    if let Some(v) = set {
        t[idx] = v;
    }
    old
}
