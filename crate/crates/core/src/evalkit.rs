//! Evaluation of trained pairs, exact oracles for small instances, and
//! protocol statistics.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abig::{episode_seeds, run_episode, Architect, Episode, InteractionTuple, UniformArchitect};
use crate::agents::{validate_vocab, ActMode, BuilderBehavior};
use crate::buildworld::{enumerate_states, reset, reward, step, task_success, Action, EnvState, GridConfig, TaskSpec, N_ACTIONS};
use crate::error::{Error, Result};
use crate::mcts::{MctsConfig, Planner};
use crate::par::Execution;

pub const STATE_GUARD: u128 = 1_000_000;
pub const SWEEP_GUARD: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_len: f64,
    pub mode: ActMode,
    pub seed: u64,
}

/// Who sends messages during evaluation.
#[derive(Clone, Copy)]
pub enum Guide<'a> {
    /// Per-step MCTS through a builder model.
    Planner {
        model: &'a dyn BuilderBehavior,
        mcts: MctsConfig,
        reward_scale: f64,
    },
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub grid: GridConfig,
    pub task: TaskSpec,
    pub vocab_size: usize,
    pub episodes: usize,
    /// How the builder picks its actions.
    pub mode: ActMode,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub episodes: Vec<Episode>,
}

fn run_one(guide: Guide<'_>, builder: &dyn BuilderBehavior, spec: &EvalSpec, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = reset(&spec.grid, &spec.task, &mut rng)?;
    match guide {
        Guide::Planner {
            model,
            mcts,
            reward_scale,
        } => {
            let mut planner = Planner::new(model, spec.grid, spec.vocab_size, mcts)?.with_reward_scale(reward_scale);
            run_episode(&spec.grid, &spec.task, start, &mut planner, builder, spec.mode, &mut rng)
        }
        Guide::Uniform => {
            let mut uniform = UniformArchitect {
                vocab_size: spec.vocab_size,
            };
            let architect: &mut dyn Architect = &mut uniform;
            run_episode(&spec.grid, &spec.task, start, architect, builder, spec.mode, &mut rng)
        }
    }
}

/// Runs `spec.episodes` frozen episodes. Each episode owns a random stream
/// drawn up front, so the result does not depend on `exec`. Episodes that
/// start solved count as successes of length 0.
pub fn evaluate(
    guide: Guide<'_>,
    builder: &dyn BuilderBehavior,
    spec: &EvalSpec,
    exec: Execution,
) -> Result<EvalOutcome> {
    if spec.episodes == 0 {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    spec.grid.validate()?;
    spec.task.validate(&spec.grid)?;
    validate_vocab(spec.vocab_size)?;
    let seeds = episode_seeds(&mut ChaCha8Rng::seed_from_u64(spec.seed), spec.episodes);
    let episodes = exec.try_map(seeds, |s| run_one(guide, builder, spec, s))?;
    let n = episodes.len() as f64;
    let successes = episodes.iter().filter(|e| e.success).count() as f64;
    let steps: usize = episodes.iter().map(Episode::len).sum();
    Ok(EvalOutcome {
        report: EvalReport {
            task: spec.task.name().to_string(),
            episodes: episodes.len(),
            success_rate: successes / n,
            mean_len: steps as f64 / n,
            mode: spec.mode,
            seed: spec.seed,
        },
        episodes,
    })
}

/// Frozen builder and source-task model, planned against a new task.
pub fn transfer_eval(
    builder: &dyn BuilderBehavior,
    model: &dyn BuilderBehavior,
    mcts: MctsConfig,
    spec: &EvalSpec,
    exec: Execution,
) -> Result<EvalOutcome> {
    let guide = Guide::Planner {
        model,
        mcts,
        reward_scale: 1.0,
    };
    evaluate(guide, builder, spec, exec)
}

fn falling(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n.saturating_sub(i)))
}

/// Upper estimate of reachable layouts: agent cell times block placements,
/// with at most one block carried (on the agent's cell).
pub fn estimated_states(cfg: &GridConfig) -> u128 {
    let n = cfg.n_cells() as u128;
    let k = cfg.n_blocks as u128;
    let carried = if k == 0 { 0 } else { k.saturating_mul(falling(n, k - 1)) };
    n.saturating_mul(falling(n, k).saturating_add(carried))
}

/// Fewest actions from `state` to task success under direct action control,
/// ignoring the horizon. `Ok(None)` when success is unreachable.
pub fn bfs_oracle(state: &EnvState, task: &TaskSpec, cfg: &GridConfig) -> Result<Option<usize>> {
    bfs_oracle_with_guard(state, task, cfg, STATE_GUARD)
}

pub fn bfs_oracle_with_guard(
    state: &EnvState,
    task: &TaskSpec,
    cfg: &GridConfig,
    guard: u128,
) -> Result<Option<usize>> {
    cfg.validate()?;
    task.validate(cfg)?;
    if let Some(why) = state.invariant_violation(cfg) {
        return Err(Error::Argument(format!("invalid start state: {why}")));
    }
    let estimated = estimated_states(cfg);
    if estimated > guard {
        return Err(Error::OracleRefused { estimated, guard });
    }
    let start = state.without_clock();
    if task_success(&start, task) {
        return Ok(Some(0));
    }
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        for a in Action::ALL {
            let next = step(&s, a, cfg)?.without_clock();
            if task_success(&next, task) {
                return Ok(Some(d + 1));
            }
            if seen.insert(next.clone()) {
                queue.push_back((next, d + 1));
            }
        }
    }
    Ok(None)
}

/// A finite deterministic MDP. Terminal states are absorbing with value 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub next: Vec<[usize; N_ACTIONS]>,
    pub reward: Vec<[f64; N_ACTIONS]>,
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(next: Vec<[usize; N_ACTIONS]>, reward: Vec<[f64; N_ACTIONS]>, terminal: Vec<bool>) -> Result<Self> {
        let n = next.len();
        if reward.len() != n || terminal.len() != n {
            return Err(Error::Argument("mdp tables differ in length".into()));
        }
        if next.iter().flatten().any(|&s| s >= n) {
            return Err(Error::Argument("mdp transition points outside the state table".into()));
        }
        Ok(Self { next, reward, terminal })
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    /// The grid world under direct action control, horizon ignored. Returns
    /// the MDP and the state behind each index.
    pub fn from_world(cfg: &GridConfig, task: &TaskSpec) -> Result<(Self, Vec<EnvState>)> {
        cfg.validate()?;
        task.validate(cfg)?;
        let estimated = estimated_states(cfg);
        if estimated > STATE_GUARD {
            return Err(Error::OracleRefused {
                estimated,
                guard: STATE_GUARD,
            });
        }
        let states = enumerate_states(cfg);
        let index: HashMap<EnvState, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut next = Vec::with_capacity(states.len());
        let mut rewards = Vec::with_capacity(states.len());
        let mut terminal = Vec::with_capacity(states.len());
        for s in &states {
            let mut row = [0usize; N_ACTIONS];
            let mut rrow = [0.0; N_ACTIONS];
            for a in Action::ALL {
                let n = step(s, a, cfg)?.without_clock();
                row[a.index()] = index[&n];
                rrow[a.index()] = reward(s, a, &n, task, cfg).0;
            }
            next.push(row);
            rewards.push(rrow);
            terminal.push(task_success(s, task));
        }
        Ok((Self::new(next, rewards, terminal)?, states))
    }

    fn backup(&self, v: &[f64], s: usize, gamma: f64) -> f64 {
        if self.terminal[s] {
            return 0.0;
        }
        (0..N_ACTIONS)
            .map(|a| self.reward[s][a] + gamma * v[self.next[s][a]])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|max_a [r + γ V(s')] − V(s)|` over states.
    pub fn bellman_residual(&self, v: &[f64], gamma: f64) -> f64 {
        (0..self.len())
            .map(|s| (self.backup(v, s, gamma) - v[s]).abs())
            .fold(0.0, f64::max)
    }

    /// Greedy action per state, lowest index on ties.
    pub fn greedy(&self, v: &[f64], gamma: f64) -> Vec<Action> {
        (0..self.len())
            .map(|s| {
                let mut best = 0;
                let mut best_q = f64::NEG_INFINITY;
                for a in 0..N_ACTIONS {
                    let q = self.reward[s][a] + gamma * v[self.next[s][a]];
                    if q > best_q {
                        best = a;
                        best_q = q;
                    }
                }
                Action::ALL[best]
            })
            .collect()
    }
}

/// Synchronous value iteration until the largest update is below `tol`.
pub fn value_iteration(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    value_iteration_with_guard(mdp, gamma, tol, SWEEP_GUARD)
}

pub fn value_iteration_with_guard(mdp: &TabularMdp, gamma: f64, tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Argument(format!("gamma must be in [0, 1), got {gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let mut v = vec![0.0; mdp.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..max_sweeps {
        let new: Vec<f64> = (0..mdp.len()).map(|s| mdp.backup(&v, s, gamma)).collect();
        residual = new.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = new;
        if residual < tol {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        sweeps: max_sweeps,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStats {
    pub vocab_size: usize,
    pub samples: usize,
    /// `P̂(a|m)`; `None` for messages never observed.
    pub conditional: Vec<Option<[f64; N_ACTIONS]>>,
    pub message_marginal: Vec<f64>,
    pub action_marginal: [f64; N_ACTIONS],
    pub mutual_information: f64,
    pub conditional_entropy: f64,
    pub message_entropy: f64,
    pub action_entropy: f64,
}

impl ProtocolStats {
    pub fn support(&self) -> usize {
        self.conditional.iter().filter(|r| r.is_some()).count()
    }
}

fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

/// Empirical message→action statistics, in bits.
pub fn protocol_stats(tuples: &[InteractionTuple]) -> Result<ProtocolStats> {
    let first = tuples
        .first()
        .ok_or_else(|| Error::Argument("protocol statistics need at least one tuple".into()))?;
    let vocab = first.msg.vocab_size();
    if tuples.iter().any(|t| t.msg.vocab_size() != vocab) {
        return Err(Error::Argument("tuples mix vocabulary sizes".into()));
    }
    let mut counts = vec![[0usize; N_ACTIONS]; vocab];
    for t in tuples {
        counts[t.msg.index()][t.action.index()] += 1;
    }
    let n = tuples.len() as f64;
    let msg_counts: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let message_marginal: Vec<f64> = msg_counts.iter().map(|&c| c as f64 / n).collect();
    let mut action_marginal = [0.0; N_ACTIONS];
    for row in &counts {
        for (a, &c) in row.iter().enumerate() {
            action_marginal[a] += c as f64 / n;
        }
    }
    let mut conditional = Vec::with_capacity(vocab);
    let mut mi = 0.0;
    let mut h_cond = 0.0;
    for (m, row) in counts.iter().enumerate() {
        if msg_counts[m] == 0 {
            conditional.push(None);
            continue;
        }
        let total = msg_counts[m] as f64;
        let mut p = [0.0; N_ACTIONS];
        for a in 0..N_ACTIONS {
            p[a] = row[a] as f64 / total;
            if row[a] > 0 {
                let joint = row[a] as f64 / n;
                mi += joint * (p[a] / action_marginal[a]).log2();
            }
        }
        h_cond += message_marginal[m] * entropy_bits(&p);
        conditional.push(Some(p));
    }
    Ok(ProtocolStats {
        vocab_size: vocab,
        samples: tuples.len(),
        conditional,
        message_entropy: entropy_bits(&message_marginal),
        action_entropy: entropy_bits(&action_marginal),
        message_marginal,
        action_marginal,
        mutual_information: mi.max(0.0),
        conditional_entropy: h_cond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abig::Provenance;
    use crate::agents::{Message, UniformBuilder};
    use crate::buildworld::{Block, Cell, Observation};

    fn state(agent: (usize, usize), block: (usize, usize)) -> EnvState {
        EnvState {
            agent: Cell::new(agent.0, agent.1),
            gripper_engaged: false,
            blocks: vec![Block {
                cell: Cell::new(block.0, block.1),
                grasped: false,
            }],
            step_count: 0,
        }
    }

    #[test]
    fn bfs_examples() {
        let g = GridConfig::new(3, 3, 1, 40).unwrap();
        assert_eq!(bfs_oracle(&state((0, 0), (2, 2)), &TaskSpec::Grasp, &g).unwrap(), Some(5));
        assert_eq!(bfs_oracle(&state((1, 1), (1, 1)), &TaskSpec::Grasp, &g).unwrap(), Some(1));
        let place = TaskSpec::Place {
            target: Cell::new(2, 2),
        };
        assert_eq!(bfs_oracle(&state((0, 0), (2, 2)), &place, &g).unwrap(), Some(0));
    }

    #[test]
    fn bfs_guard_refuses_large_instances() {
        let g = GridConfig::new(10, 10, 3, 40).unwrap();
        let mut s = state((0, 0), (1, 1));
        s.blocks.push(Block {
            cell: Cell::new(2, 2),
            grasped: false,
        });
        s.blocks.push(Block {
            cell: Cell::new(3, 3),
            grasped: false,
        });
        assert!(matches!(
            bfs_oracle(&s, &TaskSpec::HLine, &g),
            Err(Error::OracleRefused { .. })
        ));
    }

    #[test]
    fn estimate_counts_small_world_exactly() {
        let g = GridConfig::new(3, 3, 1, 10).unwrap();
        assert_eq!(estimated_states(&g), enumerate_states(&g).len() as u128);
    }

    #[test]
    fn value_iteration_closed_forms() {
        let one = TabularMdp::new(vec![[0; 6]], vec![[1.0; 6]], vec![false]).unwrap();
        let v = value_iteration(&one, 0.5, 1e-12).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-10);
        let zero = TabularMdp::new(vec![[1; 6], [0; 6]], vec![[0.0; 6]; 2], vec![false; 2]).unwrap();
        assert_eq!(value_iteration(&zero, 0.9, 1e-9).unwrap(), vec![0.0, 0.0]);
        assert!(value_iteration(&one, 1.0, 1e-9).is_err());
        assert!(matches!(
            value_iteration_with_guard(&one, 0.999, 1e-15, 10),
            Err(Error::NonConvergence { sweeps: 10, .. })
        ));
    }

    #[test]
    fn value_iteration_residual_below_tolerance() {
        let g = GridConfig::new(3, 3, 1, 40).unwrap();
        let (mdp, _) = TabularMdp::from_world(&g, &TaskSpec::Grasp).unwrap();
        let v = value_iteration(&mdp, 0.9, 1e-10).unwrap();
        assert!(mdp.bellman_residual(&v, 0.9) < 1e-10);
    }

    fn tuples_from_counts(table: &[&[usize]]) -> Vec<InteractionTuple> {
        let vocab = table.len().max(2);
        let mut out = Vec::new();
        for (m, row) in table.iter().enumerate() {
            for (a, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    out.push(InteractionTuple {
                        obs: Observation(vec![]),
                        msg: Message::new(m, vocab).unwrap(),
                        action: Action::ALL[a],
                        provenance: Provenance::Uniform,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn protocol_closed_forms() {
        let bij = protocol_stats(&tuples_from_counts(&[&[5, 0, 0, 0], &[0, 5, 0, 0], &[0, 0, 5, 0], &[0, 0, 0, 5]]))
            .unwrap();
        assert!((bij.mutual_information - 2.0).abs() < 1e-12);
        assert!(bij.conditional_entropy.abs() < 1e-12);

        let indep = protocol_stats(&tuples_from_counts(&[&[3, 1], &[6, 2]])).unwrap();
        assert!(indep.mutual_information.abs() < 1e-12);

        let mixed = protocol_stats(&tuples_from_counts(&[&[40, 10], &[10, 40]])).unwrap();
        let direct = 2.0 * 0.4 * (0.4f64 / 0.25).log2() + 2.0 * 0.1 * (0.1f64 / 0.25).log2();
        assert!((mixed.mutual_information - direct).abs() < 1e-12);
        assert!((mixed.mutual_information - 0.278).abs() < 1e-3);
    }

    #[test]
    fn unseen_messages_are_absent() {
        let t = tuples_from_counts(&[&[1, 1], &[], &[0, 2]]);
        let s = protocol_stats(&t).unwrap();
        assert_eq!(s.support(), 2);
        assert!(s.conditional[1].is_none());
        assert!(protocol_stats(&[]).is_err());
    }

    #[test]
    fn evaluate_rejects_zero_episodes_and_is_mode_independent() {
        let spec = EvalSpec {
            grid: GridConfig::new(3, 3, 1, 12).unwrap(),
            task: TaskSpec::Grasp,
            vocab_size: 3,
            episodes: 0,
            mode: ActMode::Sample,
            seed: 1,
        };
        assert!(evaluate(Guide::Uniform, &UniformBuilder, &spec, Execution::Sequential).is_err());
        let spec = EvalSpec { episodes: 40, ..spec };
        let a = evaluate(Guide::Uniform, &UniformBuilder, &spec, Execution::Sequential).unwrap();
        let b = evaluate(Guide::Uniform, &UniformBuilder, &spec, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.report.success_rate));
    }
}
