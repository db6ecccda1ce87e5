//! UCT search over messages.
//!
//! The architect cannot act, so its "actions" are messages. A message edge
//! leads to a chance outcome: the builder model picks an action for the
//! current observation and message, and the true environment applies it.
//! Tree nodes are environment states; each node has one edge per message, and
//! each edge keeps the distinct successor states it has produced.
//!
//! Returns are normalized by the largest reward magnitude seen during the
//! search, so the chosen message does not depend on the reward's units. This
//! is exact for rewards with a single nonzero magnitude, as in the grid world.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{choose_action, validate_vocab, ActMode, ActionProbs, BuilderBehavior, Message};
use crate::buildworld::{observe, reward, step, task_success, EnvState, GridConfig, TaskSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub simulations: usize,
    pub max_depth: usize,
    pub uct_c: f64,
    pub gamma: f64,
    /// How the builder model picks actions inside the tree and rollouts.
    pub builder_mode: ActMode,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            simulations: 2000,
            max_depth: 15,
            uct_c: 1.4,
            gamma: 0.95,
            builder_mode: ActMode::Sample,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.simulations == 0 {
            return Err(Error::Config("mcts simulations must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("mcts max_depth must be >= 1".into()));
        }
        if !(self.uct_c >= 0.0 && self.uct_c.is_finite()) {
            return Err(Error::Config(format!("uct_c must be finite and >= 0, got {}", self.uct_c)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChildStats {
    pub visits: u64,
    pub value_sum: f64,
}

impl ChildStats {
    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

/// UCB1 score; unvisited children score `+∞`.
pub fn uct_score(child: &ChildStats, parent_visits: u64, uct_c: f64) -> f64 {
    if child.visits == 0 {
        return f64::INFINITY;
    }
    let parent = parent_visits.max(1) as f64;
    child.mean() + uct_c * (parent.ln() / child.visits as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct MessageEdge {
    pub stats: ChildStats,
    /// Node ids of distinct successor states reached through this message.
    pub outcomes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PlanNode {
    pub env_state: EnvState,
    pub depth: usize,
    /// Success or horizon reached; nothing to plan below.
    pub terminal: bool,
    pub children: Vec<MessageEdge>,
}

impl PlanNode {
    /// Times a message was chosen at this node.
    pub fn visits(&self) -> u64 {
        self.children.iter().map(|c| c.stats.visits).sum()
    }
}

/// The search tree of one planning call; node 0 is the root.
#[derive(Clone, Debug)]
pub struct SearchTree {
    pub nodes: Vec<PlanNode>,
}

impl SearchTree {
    pub fn root(&self) -> &PlanNode {
        &self.nodes[0]
    }

    /// Most visited root message, lowest index on ties.
    pub fn best_message(&self) -> usize {
        let edges = &self.root().children;
        let mut best = 0;
        for (i, e) in edges.iter().enumerate() {
            if e.stats.visits > edges[best].stats.visits {
                best = i;
            }
        }
        best
    }
}

/// Message planner bound to one builder model. The model's action
/// distributions are memoized per (layout, message), so a planner should live
/// as long as its model stays fixed, e.g. one guiding frame.
pub struct Planner<'a> {
    model: &'a dyn BuilderBehavior,
    grid: GridConfig,
    vocab_size: usize,
    cfg: MctsConfig,
    reward_scale: f64,
    cache: HashMap<(EnvState, usize), ActionProbs>,
}

struct Search<'p, 'a> {
    planner: &'p mut Planner<'a>,
    task: &'p TaskSpec,
    nodes: Vec<PlanNode>,
    reward_ref: f64,
}

impl<'a> Planner<'a> {
    pub fn new(
        model: &'a dyn BuilderBehavior,
        grid: GridConfig,
        vocab_size: usize,
        cfg: MctsConfig,
    ) -> Result<Self> {
        grid.validate()?;
        validate_vocab(vocab_size)?;
        cfg.validate()?;
        Ok(Self {
            model,
            grid,
            vocab_size,
            cfg,
            reward_scale: 1.0,
            cache: HashMap::new(),
        })
    }

    /// Multiplies every environment reward the planner sees.
    pub fn with_reward_scale(mut self, scale: f64) -> Self {
        self.reward_scale = scale;
        self
    }

    pub fn config(&self) -> &MctsConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn plan<R: Rng + ?Sized>(&mut self, state: &EnvState, task: &TaskSpec, rng: &mut R) -> Result<Message> {
        let tree = self.search(state, task, rng)?;
        Message::new(tree.best_message(), self.vocab_size)
    }

    pub fn search<R: Rng + ?Sized>(
        &mut self,
        state: &EnvState,
        task: &TaskSpec,
        rng: &mut R,
    ) -> Result<SearchTree> {
        if let Some(why) = state.invariant_violation(&self.grid) {
            return Err(Error::Argument(format!("planning from invalid state: {why}")));
        }
        let root_terminal = task_success(state, task) || state.step_count >= self.grid.horizon;
        let simulations = self.cfg.simulations;
        let vocab = self.vocab_size;
        let mut search = Search {
            planner: self,
            task,
            nodes: vec![new_node(state.clone(), 0, root_terminal, vocab)],
            reward_ref: 0.0,
        };
        if !root_terminal {
            for _ in 0..simulations {
                search.simulate(rng)?;
            }
        }
        Ok(SearchTree { nodes: search.nodes })
    }

    fn action_probs(&mut self, state: &EnvState, msg: usize) -> Result<ActionProbs> {
        let key = (state.without_clock(), msg);
        if let Some(p) = self.cache.get(&key) {
            return Ok(*p);
        }
        let obs = observe(state, &self.grid);
        let probs = self
            .model
            .action_probs(&obs, Message::new(msg, self.vocab_size)?)?;
        self.cache.insert(key, probs);
        Ok(probs)
    }

    /// Samples the model's reaction to `msg` and applies it to the true
    /// environment. Returns the successor, raw scaled reward and done flag.
    fn transition<R: Rng + ?Sized>(
        &mut self,
        state: &EnvState,
        msg: usize,
        task: &TaskSpec,
        rng: &mut R,
    ) -> Result<(EnvState, f64, bool)> {
        let probs = self.action_probs(state, msg)?;
        let action = choose_action(&probs, self.cfg.builder_mode, rng);
        let next = step(state, action, &self.grid)?;
        let (r, done) = reward(state, action, &next, task, &self.grid);
        Ok((next, r * self.reward_scale, done))
    }
}

fn new_node(env_state: EnvState, depth: usize, terminal: bool, vocab: usize) -> PlanNode {
    PlanNode {
        env_state,
        depth,
        terminal,
        children: vec![
            MessageEdge {
                stats: ChildStats::default(),
                outcomes: Vec::new(),
            };
            vocab
        ],
    }
}

impl Search<'_, '_> {
    fn normalize(&mut self, r: f64) -> f64 {
        let mag = r.abs();
        if mag > self.reward_ref {
            if self.reward_ref > 0.0 {
                let k = self.reward_ref / mag;
                for node in &mut self.nodes {
                    for e in &mut node.children {
                        e.stats.value_sum *= k;
                    }
                }
            }
            self.reward_ref = mag;
        }
        if self.reward_ref > 0.0 {
            r / self.reward_ref
        } else {
            0.0
        }
    }

    fn select(&self, node: usize) -> usize {
        let n = &self.nodes[node];
        let parent = n.visits();
        let c = self.planner.cfg.uct_c;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, e) in n.children.iter().enumerate() {
            let s = uct_score(&e.stats, parent, c);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        best
    }

    fn simulate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let max_depth = self.planner.cfg.max_depth;
        let gamma = self.planner.cfg.gamma;
        let vocab = self.planner.vocab_size;
        let mut path: Vec<(usize, usize, f64)> = Vec::new();
        let mut node = 0;
        let mut tail = 0.0;
        loop {
            let (terminal, depth) = (self.nodes[node].terminal, self.nodes[node].depth);
            if terminal || depth >= max_depth {
                break;
            }
            let msg = self.select(node);
            let state = self.nodes[node].env_state.clone();
            let (next, r, done) = self.planner.transition(&state, msg, self.task, rng)?;
            let r = self.normalize(r);
            path.push((node, msg, r));
            let existing = self.nodes[node].children[msg]
                .outcomes
                .iter()
                .copied()
                .find(|&c| self.nodes[c].env_state == next);
            match existing {
                Some(child) => node = child,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(new_node(next.clone(), depth + 1, done, vocab));
                    self.nodes[node].children[msg].outcomes.push(id);
                    if !done {
                        tail = self.rollout(next, depth + 1, rng)?;
                    }
                    break;
                }
            }
        }
        let mut ret = tail;
        for (node, msg, r) in path.into_iter().rev() {
            ret = r + gamma * ret;
            let stats = &mut self.nodes[node].children[msg].stats;
            stats.visits += 1;
            stats.value_sum += ret;
        }
        Ok(())
    }

    /// Uniform-random messages through the model until done or max depth.
    fn rollout<R: Rng + ?Sized>(&mut self, mut state: EnvState, mut depth: usize, rng: &mut R) -> Result<f64> {
        let max_depth = self.planner.cfg.max_depth;
        let gamma = self.planner.cfg.gamma;
        let vocab = self.planner.vocab_size;
        let mut ret = 0.0;
        let mut discount = 1.0;
        while depth < max_depth {
            let msg = rng.gen_range(0..vocab);
            let (next, r, done) = self.planner.transition(&state, msg, self.task, rng)?;
            ret += discount * self.normalize(r);
            if done {
                break;
            }
            discount *= gamma;
            depth += 1;
            state = next;
        }
        Ok(ret)
    }
}

/// One-shot planning call with a fresh planner.
pub fn mcts_plan<R: Rng + ?Sized>(
    state: &EnvState,
    task: &TaskSpec,
    grid: &GridConfig,
    model: &dyn BuilderBehavior,
    vocab_size: usize,
    cfg: &MctsConfig,
    rng: &mut R,
) -> Result<Message> {
    Planner::new(model, *grid, vocab_size, *cfg)?.plan(state, task, rng)
}
