//! Iterated modeling and guiding frames, plus the two control settings.
//!
//! A modeling frame pairs the builder with uniform messages and records what
//! it does; the architect then clones that behavior. A guiding frame pairs the
//! builder with the architect's planner; the builder then imitates itself on
//! the guided interactions. Each buffer is flushed right after its fit.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    builder_act, fit_builder_model, self_imitate, validate_vocab, ActMode, BuilderBehavior, BuilderModel,
    BuilderPolicy, Message, PolicyNet,
};
use crate::buildworld::{observe, reset, reward, step, task_success, Action, EnvState, GridConfig, Observation, TaskSpec};
use crate::error::{Error, Result};
use crate::mcts::{MctsConfig, Planner};
use crate::tinynn::BcHyper;

/// Who chose the message of a recorded interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Uniform,
    Planner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTuple {
    pub obs: Observation,
    pub msg: Message,
    pub action: Action,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferRole {
    /// D_A, filled during modeling frames.
    Modeling,
    /// D_B, filled during guiding frames.
    Guiding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Buffer {
    role: BufferRole,
    tuples: Vec<InteractionTuple>,
}

impl Buffer {
    pub fn new(role: BufferRole) -> Self {
        Self {
            role,
            tuples: Vec::new(),
        }
    }

    pub fn role(&self) -> BufferRole {
        self.role
    }

    pub fn push(&mut self, tuple: InteractionTuple) {
        self.tuples.push(tuple);
    }

    pub fn tuples(&self) -> &[InteractionTuple] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn flush(&mut self) {
        self.tuples.clear();
    }
}

/// The message-sending side of an episode.
pub trait Architect {
    fn message(&mut self, state: &EnvState, task: &TaskSpec, rng: &mut dyn RngCore) -> Result<Message>;
    fn provenance(&self) -> Provenance;
}

/// Ignores the state and sends uniformly random messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformArchitect {
    pub vocab_size: usize,
}

impl Architect for UniformArchitect {
    fn message(&mut self, _state: &EnvState, _task: &TaskSpec, rng: &mut dyn RngCore) -> Result<Message> {
        Ok(Message::uniform(self.vocab_size, rng))
    }

    fn provenance(&self) -> Provenance {
        Provenance::Uniform
    }
}

impl Architect for Planner<'_> {
    fn message(&mut self, state: &EnvState, task: &TaskSpec, rng: &mut dyn RngCore) -> Result<Message> {
        self.plan(state, task, rng)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Planner
    }
}

/// One logged step: what the builder saw and did, and where it led.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub obs: Observation,
    pub msg: usize,
    pub action: Action,
    pub reward: f64,
    pub state: EnvState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task: TaskSpec,
    pub start: EnvState,
    pub steps: Vec<StepRecord>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tuples(&self, vocab_size: usize, provenance: Provenance) -> Result<Vec<InteractionTuple>> {
        self.steps
            .iter()
            .map(|s| {
                Ok(InteractionTuple {
                    obs: s.obs.clone(),
                    msg: Message::new(s.msg, vocab_size)?,
                    action: s.action,
                    provenance,
                })
            })
            .collect()
    }
}

/// Runs one episode from `start` until success or the horizon. An episode
/// that starts solved has no steps.
pub fn run_episode(
    grid: &GridConfig,
    task: &TaskSpec,
    start: EnvState,
    architect: &mut dyn Architect,
    builder: &dyn BuilderBehavior,
    mode: ActMode,
    rng: &mut dyn RngCore,
) -> Result<Episode> {
    let mut state = start.clone();
    let mut steps = Vec::new();
    let mut success = task_success(&state, task);
    while !success && state.step_count < grid.horizon {
        let obs = observe(&state, grid);
        let msg = architect.message(&state, task, rng)?;
        let action = builder_act(builder, &obs, msg, rng, mode)?;
        let next = step(&state, action, grid)?;
        let (r, _) = reward(&state, action, &next, task, grid);
        success = task_success(&next, task);
        steps.push(StepRecord {
            obs,
            msg: msg.index(),
            action,
            reward: r,
            state: next.clone(),
        });
        state = next;
    }
    Ok(Episode {
        task: task.clone(),
        start,
        steps,
        success,
    })
}

/// Episode counts for one frame. `success_rate` is `None` for zero episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
    pub mean_len: Option<f64>,
}

impl FrameStats {
    pub fn from_episodes(episodes: &[Episode]) -> Self {
        let n = episodes.len();
        let successes = episodes.iter().filter(|e| e.success).count();
        let steps: usize = episodes.iter().map(Episode::len).sum();
        Self {
            episodes: n,
            successes,
            success_rate: (n > 0).then(|| successes as f64 / n as f64),
            mean_len: (n > 0).then(|| steps as f64 / n as f64),
        }
    }
}

fn run_frame(
    grid: &GridConfig,
    tasks: &[TaskSpec],
    episodes: usize,
    architect: &mut dyn Architect,
    builder: &dyn BuilderBehavior,
    role: BufferRole,
    vocab_size: usize,
    rng: &mut dyn RngCore,
) -> Result<(Buffer, Vec<Episode>)> {
    if tasks.is_empty() {
        return Err(Error::Argument("a frame needs at least one task".into()));
    }
    let mut buffer = Buffer::new(role);
    let mut logs = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let task = &tasks[e % tasks.len()];
        let start = reset(grid, task, rng)?;
        let ep = run_episode(grid, task, start, architect, builder, ActMode::Sample, rng)?;
        for t in ep.tuples(vocab_size, architect.provenance())? {
            buffer.push(t);
        }
        logs.push(ep);
    }
    Ok((buffer, logs))
}

/// Builder interacts under uniform messages; returns D_A and the episodes.
/// Episode `e` uses `tasks[e % tasks.len()]`.
pub fn run_modeling_frame(
    builder: &dyn BuilderBehavior,
    grid: &GridConfig,
    tasks: &[TaskSpec],
    vocab_size: usize,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<(Buffer, Vec<Episode>)> {
    validate_vocab(vocab_size)?;
    let mut architect = UniformArchitect { vocab_size };
    run_frame(grid, tasks, episodes, &mut architect, builder, BufferRole::Modeling, vocab_size, rng)
}

/// Builder interacts under the architect's messages; returns D_B and the
/// episodes.
pub fn run_guiding_frame(
    architect: &mut dyn Architect,
    builder: &dyn BuilderBehavior,
    grid: &GridConfig,
    tasks: &[TaskSpec],
    vocab_size: usize,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<(Buffer, Vec<Episode>)> {
    validate_vocab(vocab_size)?;
    run_frame(grid, tasks, episodes, architect, builder, BufferRole::Guiding, vocab_size, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Planned messages in guiding frames.
    Abig,
    /// Uniform messages in guiding frames too.
    NoIntent,
    /// Untrained uniform-action builder.
    Random,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Abig, Variant::NoIntent, Variant::Random];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Abig => "abig",
            Variant::NoIntent => "no_intent",
            Variant::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbigConfig {
    pub n_iterations: usize,
    /// Episodes per iteration, split evenly between the two frames.
    pub n_collect: usize,
    pub env: GridConfig,
    /// Training tasks; episode `e` of a frame uses `tasks[e % len]`.
    pub tasks: Vec<TaskSpec>,
    pub vocab_size: usize,
    pub model_hyper: BcHyper,
    pub builder_hyper: BcHyper,
    pub mcts: MctsConfig,
    pub seed: u64,
    /// Multiplies every reward the planner sees.
    pub reward_scale: f64,
    /// Self-imitate only tuples from successful guided episodes.
    pub imitate_successful_only: bool,
}

impl Default for AbigConfig {
    fn default() -> Self {
        Self {
            n_iterations: 10,
            n_collect: 100,
            env: GridConfig::default(),
            tasks: vec![TaskSpec::Grasp],
            vocab_size: 6,
            model_hyper: BcHyper::default(),
            builder_hyper: BcHyper::default(),
            mcts: MctsConfig::default(),
            seed: 0,
            reward_scale: 1.0,
            imitate_successful_only: false,
        }
    }
}

impl AbigConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_collect < 2 || self.n_collect % 2 != 0 {
            return Err(Error::Config(format!(
                "n_collect must be even and >= 2, got {}",
                self.n_collect
            )));
        }
        self.env.validate()?;
        validate_vocab(self.vocab_size)?;
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one training task is required".into()));
        }
        for t in &self.tasks {
            t.validate(&self.env)?;
        }
        self.mcts.validate()?;
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Config(format!(
                "reward_scale must be positive and finite, got {}",
                self.reward_scale
            )));
        }
        for h in [&self.model_hyper, &self.builder_hyper] {
            if h.batch_size == 0 {
                return Err(Error::Config("batch_size must be >= 1".into()));
            }
            if !(h.adam.lr > 0.0) {
                return Err(Error::Config("learning rate must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn frame_episodes(&self) -> usize {
        self.n_collect / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Modeling,
    Guiding,
    FinalModeling,
}

/// What one frame did, with parameter digests taken after its fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub iteration: usize,
    pub frame: FrameKind,
    pub stats: FrameStats,
    pub buffer_size: usize,
    /// Tuples the fit actually used.
    pub fit_size: usize,
    pub bc_loss: Option<f64>,
    pub fit_steps: usize,
    pub builder_digest: String,
    pub model_digest: String,
    /// Buffer length right after the flush.
    pub flushed_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub modeling: FrameRecord,
    pub guiding: FrameRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub variant: Variant,
    pub seed: u64,
    pub initial_builder_digest: String,
    pub builder: BuilderPolicy,
    pub model: BuilderModel,
    pub iterations: Vec<IterationMetrics>,
    pub final_modeling: FrameRecord,
}

impl RunArtifacts {
    /// Every frame record in order.
    pub fn frames(&self) -> Vec<&FrameRecord> {
        let mut out: Vec<&FrameRecord> = Vec::with_capacity(2 * self.iterations.len() + 1);
        for it in &self.iterations {
            out.push(&it.modeling);
            out.push(&it.guiding);
        }
        out.push(&self.final_modeling);
        out
    }
}

struct Trainer<'c> {
    cfg: &'c AbigConfig,
    rng: ChaCha8Rng,
    builder: BuilderPolicy,
    model: BuilderModel,
}

impl Trainer<'_> {
    fn modeling_frame(&mut self, iteration: usize, kind: FrameKind) -> Result<FrameRecord> {
        let cfg = self.cfg;
        let (mut d_a, episodes) = run_modeling_frame(
            &self.builder,
            &cfg.env,
            &cfg.tasks,
            cfg.vocab_size,
            cfg.frame_episodes(),
            &mut self.rng,
        )?;
        let buffer_size = d_a.len();
        let mut report = Default::default();
        if !d_a.is_empty() {
            let (model, r) = fit_builder_model(&d_a, cfg.env.obs_dim(), cfg.vocab_size, &cfg.model_hyper, &mut self.rng)?;
            self.model = model;
            report = r;
        }
        d_a.flush();
        Ok(FrameRecord {
            iteration,
            frame: kind,
            stats: FrameStats::from_episodes(&episodes),
            buffer_size,
            fit_size: buffer_size,
            bc_loss: report.final_loss,
            fit_steps: report.steps,
            builder_digest: self.builder.digest(),
            model_digest: self.model.digest(),
            flushed_size: d_a.len(),
        })
    }

    fn guiding_frame(&mut self, iteration: usize, intent: bool) -> Result<FrameRecord> {
        let cfg = self.cfg;
        let (mut d_b, episodes) = if intent {
            let mut planner = Planner::new(&self.model, cfg.env, cfg.vocab_size, cfg.mcts)?
                .with_reward_scale(cfg.reward_scale);
            run_guiding_frame(
                &mut planner,
                &self.builder,
                &cfg.env,
                &cfg.tasks,
                cfg.vocab_size,
                cfg.frame_episodes(),
                &mut self.rng,
            )?
        } else {
            let mut uniform = UniformArchitect {
                vocab_size: cfg.vocab_size,
            };
            run_guiding_frame(
                &mut uniform,
                &self.builder,
                &cfg.env,
                &cfg.tasks,
                cfg.vocab_size,
                cfg.frame_episodes(),
                &mut self.rng,
            )?
        };
        let buffer_size = d_b.len();
        if cfg.imitate_successful_only {
            d_b.flush();
            let provenance = if intent { Provenance::Planner } else { Provenance::Uniform };
            for ep in episodes.iter().filter(|e| e.success) {
                for t in ep.tuples(cfg.vocab_size, provenance)? {
                    d_b.push(t);
                }
            }
        }
        let fit_size = d_b.len();
        let mut report = Default::default();
        if !d_b.is_empty() {
            report = self_imitate(&mut self.builder, &d_b, &cfg.builder_hyper, &mut self.rng)?;
        }
        d_b.flush();
        Ok(FrameRecord {
            iteration,
            frame: FrameKind::Guiding,
            stats: FrameStats::from_episodes(&episodes),
            buffer_size,
            fit_size,
            bc_loss: report.final_loss,
            fit_steps: report.steps,
            builder_digest: self.builder.digest(),
            model_digest: self.model.digest(),
            flushed_size: d_b.len(),
        })
    }
}

fn train(cfg: &AbigConfig, variant: Variant) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obs_dim = cfg.env.obs_dim();
    let builder = BuilderPolicy::init(&mut rng, obs_dim, cfg.vocab_size)?;
    // Placeholder until the first modeling frame fits a real model.
    let model = BuilderModel::new(PolicyNet::init(&mut rng, obs_dim, cfg.vocab_size)?);
    let mut t = Trainer {
        cfg,
        rng,
        builder,
        model,
    };
    let initial_builder_digest = t.builder.digest();
    let mut iterations = Vec::with_capacity(cfg.n_iterations);
    for i in 0..cfg.n_iterations {
        let modeling = t.modeling_frame(i, FrameKind::Modeling)?;
        let guiding = t.guiding_frame(i, variant == Variant::Abig)?;
        iterations.push(IterationMetrics { modeling, guiding });
    }
    let final_modeling = t.modeling_frame(cfg.n_iterations, FrameKind::FinalModeling)?;
    Ok(RunArtifacts {
        variant,
        seed: cfg.seed,
        initial_builder_digest,
        builder: t.builder,
        model: t.model,
        iterations,
        final_modeling,
    })
}

pub fn abig_train(cfg: &AbigConfig) -> Result<RunArtifacts> {
    train(cfg, Variant::Abig)
}

/// Same loop with uniform messages in the guiding frames. The returned model
/// comes from the final modeling frame, so evaluation can still plan with it.
pub fn train_no_intent(cfg: &AbigConfig) -> Result<RunArtifacts> {
    train(cfg, Variant::NoIntent)
}

/// The lower-bound control: a builder that ignores everything.
pub fn random_builder_baseline(_cfg: &AbigConfig) -> crate::agents::UniformBuilder {
    crate::agents::UniformBuilder
}

/// Seeds every episode of a batch up front so episodes can run in any order.
pub fn episode_seeds<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.gen()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ActionProbs, UniformBuilder};
    use crate::tinynn::AdamConfig;

    struct Always(Action);
    impl BuilderBehavior for Always {
        fn action_probs(&self, _: &Observation, _: Message) -> Result<ActionProbs> {
            let mut p = [0.0; 6];
            p[self.0.index()] = 1.0;
            Ok(p)
        }
    }

    fn tiny_cfg() -> AbigConfig {
        let hyper = BcHyper {
            epochs: 3,
            batch_size: 32,
            adam: AdamConfig::default(),
        };
        AbigConfig {
            n_iterations: 2,
            n_collect: 4,
            env: GridConfig::new(3, 3, 1, 8).unwrap(),
            tasks: vec![TaskSpec::Grasp],
            vocab_size: 3,
            model_hyper: hyper,
            builder_hyper: hyper,
            mcts: MctsConfig {
                simulations: 30,
                max_depth: 4,
                ..MctsConfig::default()
            },
            seed: 5,
            reward_scale: 1.0,
            imitate_successful_only: false,
        }
    }

    #[test]
    fn noop_builder_never_succeeds() {
        let grid = GridConfig::new(4, 4, 1, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (buf, eps) = run_modeling_frame(&Always(Action::NoOp), &grid, &[TaskSpec::Grasp], 4, 10, &mut rng).unwrap();
        assert_eq!(buf.len(), 200);
        assert!(buf.tuples().iter().all(|t| t.action == Action::NoOp && t.provenance == Provenance::Uniform));
        assert!(eps.iter().all(|e| e.len() == 20 && !e.success));
        assert_eq!(buf.role(), BufferRole::Modeling);
    }

    #[test]
    fn zero_episode_frame() {
        let grid = GridConfig::new(3, 3, 1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = UniformArchitect { vocab_size: 2 };
        let (buf, eps) =
            run_guiding_frame(&mut a, &UniformBuilder, &grid, &[TaskSpec::Grasp], 2, 0, &mut rng).unwrap();
        assert!(buf.is_empty());
        let stats = FrameStats::from_episodes(&eps);
        assert_eq!(stats.success_rate, None);
    }

    #[test]
    fn config_validation() {
        let ok = tiny_cfg();
        assert!(ok.validate().is_ok());
        for bad in [
            AbigConfig { n_collect: 3, ..ok.clone() },
            AbigConfig { n_collect: 0, ..ok.clone() },
            AbigConfig { vocab_size: 1, ..ok.clone() },
            AbigConfig { tasks: vec![], ..ok.clone() },
            AbigConfig { reward_scale: 0.0, ..ok.clone() },
        ] {
            assert!(matches!(abig_train(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_iterations_keeps_initial_builder() {
        let cfg = AbigConfig {
            n_iterations: 0,
            ..tiny_cfg()
        };
        let run = abig_train(&cfg).unwrap();
        assert!(run.iterations.is_empty());
        assert_eq!(run.builder.digest(), run.initial_builder_digest);
        assert_eq!(run.final_modeling.frame, FrameKind::FinalModeling);
        assert!(run.final_modeling.fit_steps > 0);
    }

    #[test]
    fn frames_alternate_and_flush() {
        let run = abig_train(&tiny_cfg()).unwrap();
        assert_eq!(run.iterations.len(), 2);
        let mut builder = run.initial_builder_digest.clone();
        let mut model: Option<String> = None;
        for it in &run.iterations {
            // Modeling frames leave the builder alone.
            assert_eq!(it.modeling.builder_digest, builder);
            assert_ne!(Some(&it.modeling.model_digest), model.as_ref());
            // Guiding frames leave the model alone.
            assert_eq!(it.guiding.model_digest, it.modeling.model_digest);
            assert_ne!(it.guiding.builder_digest, builder);
            assert_eq!(it.modeling.flushed_size, 0);
            assert_eq!(it.guiding.flushed_size, 0);
            builder = it.guiding.builder_digest.clone();
            model = Some(it.guiding.model_digest.clone());
        }
        assert_eq!(run.builder.digest(), builder);
    }

    #[test]
    fn training_is_deterministic() {
        let a = abig_train(&tiny_cfg()).unwrap();
        let b = abig_train(&tiny_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reward_scale_leaves_builder_untouched() {
        let a = abig_train(&tiny_cfg()).unwrap();
        let b = abig_train(&AbigConfig {
            reward_scale: 7.0,
            ..tiny_cfg()
        })
        .unwrap();
        let digests = |r: &RunArtifacts| r.frames().iter().map(|f| f.builder_digest.clone()).collect::<Vec<_>>();
        assert_eq!(digests(&a), digests(&b));
    }

    #[test]
    fn no_intent_diverges_from_abig() {
        let a = abig_train(&tiny_cfg()).unwrap();
        let b = train_no_intent(&tiny_cfg()).unwrap();
        assert_eq!(a.iterations[0].modeling, b.iterations[0].modeling);
        assert_ne!(a.builder.digest(), b.builder.digest());
    }

    #[test]
    fn multi_task_frames_cycle_tasks() {
        let grid = GridConfig::new(3, 3, 2, 4).unwrap();
        let tasks = [TaskSpec::Grasp, TaskSpec::HLine];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, eps) = run_modeling_frame(&UniformBuilder, &grid, &tasks, 2, 6, &mut rng).unwrap();
        for (i, e) in eps.iter().enumerate() {
            assert_eq!(e.task, tasks[i % 2]);
        }
    }
}
