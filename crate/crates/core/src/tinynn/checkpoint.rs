//! JSON container for network parameters.
//!
//! ```json
//! {
//!   "format": "archbuild-mlp/1",
//!   "tensors": [
//!     { "name": "layer0.weight", "shape": [12, 126], "data": [ ... ] },
//!     { "name": "layer0.bias",   "shape": [126],     "data": [ ... ] },
//!     ...
//!   ]
//! }
//! ```
//!
//! Weights are `n_in × n_out`, row-major. Values are written with shortest
//! round-trip formatting, so a load reproduces the parameters bit for bit.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, MlpParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "archbuild-mlp/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub format: String,
    pub tensors: Vec<NamedTensor>,
}

impl NetworkCheckpoint {
    pub fn from_params(params: &MlpParams) -> Self {
        let mut tensors = Vec::with_capacity(2 * params.layers.len());
        for (i, l) in params.layers.iter().enumerate() {
            tensors.push(NamedTensor {
                name: format!("layer{i}.weight"),
                shape: vec![l.n_in(), l.n_out()],
                data: l.weights.iter().copied().collect(),
            });
            tensors.push(NamedTensor {
                name: format!("layer{i}.bias"),
                shape: vec![l.n_out()],
                data: l.bias.to_vec(),
            });
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            tensors,
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.tensors.is_empty() || self.tensors.len() % 2 != 0 {
            return Err(Error::Checkpoint("expected weight/bias tensor pairs".into()));
        }
        let mut layers = Vec::new();
        for (i, pair) in self.tensors.chunks(2).enumerate() {
            let (w, b) = (&pair[0], &pair[1]);
            if w.name != format!("layer{i}.weight") || b.name != format!("layer{i}.bias") {
                return Err(Error::Checkpoint(format!("unexpected tensor names at layer {i}")));
            }
            let [n_in, n_out] = w.shape[..] else {
                return Err(Error::Checkpoint(format!("{} must be 2-d", w.name)));
            };
            if b.shape != [n_out] || b.data.len() != n_out {
                return Err(Error::Checkpoint(format!("{} shape mismatch", b.name)));
            }
            if let Some(prev) = layers.last().map(Dense::n_out) {
                if prev != n_in {
                    return Err(Error::Checkpoint(format!("layer {i} does not chain")));
                }
            }
            let weights = Array2::from_shape_vec((n_in, n_out), w.data.clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", w.name)))?;
            layers.push(Dense {
                weights,
                bias: Array1::from(b.data.clone()),
            });
        }
        let params = MlpParams { layers };
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let p = MlpParams::init_with_hidden(&mut ChaCha8Rng::seed_from_u64(3), 5, &[7, 4], 3);
        let text = serde_json::to_string(&NetworkCheckpoint::from_params(&p)).unwrap();
        let back: NetworkCheckpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_params().unwrap().digest(), p.digest());
    }

    #[test]
    fn rejects_broken_chain() {
        let p = MlpParams::init_with_hidden(&mut ChaCha8Rng::seed_from_u64(3), 5, &[7], 3);
        let mut ck = NetworkCheckpoint::from_params(&p);
        ck.tensors[2].shape = vec![6, 3];
        ck.tensors[2].data.truncate(18);
        assert!(ck.to_params().is_err());
        let mut ck = NetworkCheckpoint::from_params(&p);
        ck.format = "other".into();
        assert!(ck.to_params().is_err());
    }
}
