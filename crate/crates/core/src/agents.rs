//! Builder-side agents: the message-conditioned builder policy and the
//! architect's cloned model of it.
//!
//! Nothing in this module takes a reward. The builder only ever sees
//! observations, messages and its own actions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::abig::Buffer;
use crate::buildworld::{Action, Observation, N_ACTIONS};
use crate::error::{Error, Result};
use crate::tinynn::{bc_fit, AdamState, Batch, BcHyper, FitReport, MlpParams, NetworkCheckpoint};

pub const MIN_VOCAB: usize = 2;
pub const MAX_VOCAB: usize = 72;

pub type ActionProbs = [f64; N_ACTIONS];

pub fn validate_vocab(vocab_size: usize) -> Result<()> {
    if (MIN_VOCAB..=MAX_VOCAB).contains(&vocab_size) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "vocabulary size must be in {MIN_VOCAB}..={MAX_VOCAB}, got {vocab_size}"
        )))
    }
}

/// One symbol out of a vocabulary of `vocab_size`, fed to networks one-hot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    index: usize,
    vocab_size: usize,
}

impl Message {
    pub fn new(index: usize, vocab_size: usize) -> Result<Self> {
        validate_vocab(vocab_size)?;
        if index >= vocab_size {
            return Err(Error::Argument(format!(
                "message {index} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(Self { index, vocab_size })
    }

    pub fn uniform<R: Rng + ?Sized>(vocab_size: usize, rng: &mut R) -> Self {
        Self {
            index: rng.gen_range(0..vocab_size),
            vocab_size,
        }
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn vocab_size(self) -> usize {
        self.vocab_size
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; self.vocab_size];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    #[default]
    Sample,
    Argmax,
}

/// Network input: observation followed by the one-hot message.
pub fn policy_input(obs: &Observation, msg: Message) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + msg.vocab_size());
    v.extend_from_slice(obs.values());
    v.extend(msg.one_hot());
    v
}

/// Anything that maps `(observation, message)` to an action distribution:
/// the learned builder, the architect's model of it, or a scripted stand-in.
pub trait BuilderBehavior: Sync {
    fn action_probs(&self, obs: &Observation, msg: Message) -> Result<ActionProbs>;
}

impl<B: BuilderBehavior + ?Sized> BuilderBehavior for &B {
    fn action_probs(&self, obs: &Observation, msg: Message) -> Result<ActionProbs> {
        (**self).action_probs(obs, msg)
    }
}

/// Picks an action from a distribution. Argmax ties go to the lowest index.
pub fn choose_action<R: Rng + ?Sized>(probs: &ActionProbs, mode: ActMode, rng: &mut R) -> Action {
    let index = match mode {
        ActMode::Argmax => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let total: f64 = probs.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = N_ACTIONS - 1;
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    pick = i;
                    break;
                }
                u -= p;
            }
            // Never land on a zero-probability action through rounding.
            while probs[pick] <= 0.0 && pick > 0 {
                pick -= 1;
            }
            pick
        }
    };
    Action::from_index(index).expect("index below N_ACTIONS")
}

pub fn builder_act<B, R>(
    builder: &B,
    obs: &Observation,
    msg: Message,
    rng: &mut R,
    mode: ActMode,
) -> Result<Action>
where
    B: BuilderBehavior + ?Sized,
    R: Rng + ?Sized,
{
    let probs = builder.action_probs(obs, msg)?;
    Ok(choose_action(&probs, mode, rng))
}

/// A network over `observation ⊕ one-hot(message)` with a 6-way head.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    params: MlpParams,
    obs_dim: usize,
    vocab_size: usize,
}

impl PolicyNet {
    pub fn new(params: MlpParams, obs_dim: usize, vocab_size: usize) -> Result<Self> {
        validate_vocab(vocab_size)?;
        if params.in_dim() != obs_dim + vocab_size || params.out_dim() != N_ACTIONS {
            return Err(Error::Argument(format!(
                "network is {}->{}, expected {}->{}",
                params.in_dim(),
                params.out_dim(),
                obs_dim + vocab_size,
                N_ACTIONS
            )));
        }
        Ok(Self {
            params,
            obs_dim,
            vocab_size,
        })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, obs_dim: usize, vocab_size: usize) -> Result<Self> {
        validate_vocab(vocab_size)?;
        Self::new(
            MlpParams::init(rng, obs_dim + vocab_size, N_ACTIONS),
            obs_dim,
            vocab_size,
        )
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    fn fit<R: Rng + ?Sized>(&mut self, data: &Buffer, hyper: &BcHyper, rng: &mut R) -> Result<FitReport> {
        let batch = self.batch_from(data)?;
        let mut adam = AdamState::new(hyper.adam, &self.params);
        bc_fit(&batch, &mut self.params, &mut adam, hyper.epochs, hyper.batch_size, rng)
    }

    fn batch_from(&self, data: &Buffer) -> Result<Batch> {
        if data.is_empty() {
            return Err(Error::Argument("cannot fit on an empty buffer".into()));
        }
        let mut rows = Vec::with_capacity(data.len());
        let mut targets = Vec::with_capacity(data.len());
        for t in data.tuples() {
            if t.obs.len() != self.obs_dim || t.msg.vocab_size() != self.vocab_size {
                return Err(Error::Argument("buffer tuple dimensions do not match the network".into()));
            }
            rows.push(policy_input(&t.obs, t.msg));
            targets.push(t.action.index());
        }
        Batch::new(&rows, targets)
    }

    pub fn checkpoint(&self, role: &str) -> PolicyCheckpoint {
        PolicyCheckpoint {
            role: role.to_string(),
            obs_dim: self.obs_dim,
            vocab_size: self.vocab_size,
            network: NetworkCheckpoint::from_params(&self.params),
        }
    }
}

impl BuilderBehavior for PolicyNet {
    fn action_probs(&self, obs: &Observation, msg: Message) -> Result<ActionProbs> {
        if obs.len() != self.obs_dim || msg.vocab_size() != self.vocab_size {
            return Err(Error::Argument(format!(
                "policy expects obs {} / vocab {}, got obs {} / vocab {}",
                self.obs_dim,
                self.vocab_size,
                obs.len(),
                msg.vocab_size()
            )));
        }
        let probs = self.params.forward_probs(&policy_input(obs, msg))?;
        let mut out = [0.0; N_ACTIONS];
        out.copy_from_slice(&probs);
        Ok(out)
    }
}

/// Serialized form of a [`PolicyNet`]; the network uses the `tinynn` schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub role: String,
    pub obs_dim: usize,
    pub vocab_size: usize,
    pub network: NetworkCheckpoint,
}

impl PolicyCheckpoint {
    pub fn to_net(&self) -> Result<PolicyNet> {
        PolicyNet::new(self.network.to_params()?, self.obs_dim, self.vocab_size)
    }
}

/// The builder's own policy. Persists across frames and only ever learns by
/// imitating its guided interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct BuilderPolicy {
    net: PolicyNet,
}

impl BuilderPolicy {
    pub fn new(net: PolicyNet) -> Self {
        Self { net }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, obs_dim: usize, vocab_size: usize) -> Result<Self> {
        Ok(Self::new(PolicyNet::init(rng, obs_dim, vocab_size)?))
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    pub fn digest(&self) -> String {
        self.net.digest()
    }
}

impl BuilderBehavior for BuilderPolicy {
    fn action_probs(&self, obs: &Observation, msg: Message) -> Result<ActionProbs> {
        self.net.action_probs(obs, msg)
    }
}

/// The architect's behavioral clone of the builder, refit from scratch every
/// modeling frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BuilderModel {
    net: PolicyNet,
}

impl BuilderModel {
    pub fn new(net: PolicyNet) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    pub fn digest(&self) -> String {
        self.net.digest()
    }
}

impl BuilderBehavior for BuilderModel {
    fn action_probs(&self, obs: &Observation, msg: Message) -> Result<ActionProbs> {
        self.net.action_probs(obs, msg)
    }
}

/// Uniform over the six actions regardless of input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UniformBuilder;

impl BuilderBehavior for UniformBuilder {
    fn action_probs(&self, _obs: &Observation, _msg: Message) -> Result<ActionProbs> {
        Ok([1.0 / N_ACTIONS as f64; N_ACTIONS])
    }
}

/// Fits a fresh builder model on modeling-frame data.
pub fn fit_builder_model<R: Rng + ?Sized>(
    d_a: &Buffer,
    obs_dim: usize,
    vocab_size: usize,
    hyper: &BcHyper,
    rng: &mut R,
) -> Result<(BuilderModel, FitReport)> {
    if d_a.is_empty() {
        return Err(Error::Argument("builder model needs a non-empty modeling buffer".into()));
    }
    let mut net = PolicyNet::init(rng, obs_dim, vocab_size)?;
    let report = net.fit(d_a, hyper, rng)?;
    Ok((BuilderModel::new(net), report))
}

/// Warm-started behavioral cloning of the builder on its own guided
/// interactions.
pub fn self_imitate<R: Rng + ?Sized>(
    policy: &mut BuilderPolicy,
    d_b: &Buffer,
    hyper: &BcHyper,
    rng: &mut R,
) -> Result<FitReport> {
    if d_b.is_empty() {
        return Err(Error::Argument("self-imitation needs a non-empty guiding buffer".into()));
    }
    policy.net.fit(d_b, hyper, rng)
}
