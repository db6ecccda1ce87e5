//! Deterministic block-construction grid world.
//!
//! A single agent moves on a `width × height` grid, can grasp one block at a
//! time with its gripper, and carries the grasped block along. Coordinates are
//! `(x, y)` with `x` the column and `y` the row; row 0 is the top line of the
//! ASCII rendering, so `Up` decrements `y`.
//!
//! Rewards are sparse: a unit reward on the single transition that first
//! satisfies the task predicate, and the episode ends there.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub n_blocks: usize,
    /// Episode length limit in steps.
    pub horizon: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            n_blocks: 1,
            horizon: 40,
        }
    }
}

impl GridConfig {
    pub fn new(width: usize, height: usize, n_blocks: usize, horizon: usize) -> Result<Self> {
        let cfg = Self {
            width,
            height,
            n_blocks,
            horizon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1 step".into()));
        }
        if self.n_cells() < self.n_blocks + 1 {
            return Err(Error::Config(format!(
                "{}x{} grid has no room for the agent and {} blocks on distinct cells",
                self.width, self.height, self.n_blocks
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    /// Length of the observation vector, `3 + 3·n_blocks`.
    pub fn obs_dim(&self) -> usize {
        3 + 3 * self.n_blocks
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub cell: Cell,
    pub grasped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agent: Cell,
    pub gripper_engaged: bool,
    /// Blocks in spawn order; the order never changes during an episode.
    pub blocks: Vec<Block>,
    pub step_count: usize,
}

impl EnvState {
    /// The same configuration with the step counter cleared. Useful as a key
    /// when only the layout matters (observations do not include the clock).
    pub fn without_clock(&self) -> EnvState {
        EnvState {
            step_count: 0,
            ..self.clone()
        }
    }

    pub fn grasped_block(&self) -> Option<usize> {
        self.blocks.iter().position(|b| b.grasped)
    }

    fn ungrasped_block_at(&self, cell: Cell) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| !b.grasped && b.cell == cell)
    }

    /// Returns a description of the first violated state invariant, if any.
    pub fn invariant_violation(&self, cfg: &GridConfig) -> Option<String> {
        if !cfg.contains(self.agent) {
            return Some(format!("agent {} out of bounds", self.agent));
        }
        if self.blocks.len() != cfg.n_blocks {
            return Some(format!(
                "expected {} blocks, found {}",
                cfg.n_blocks,
                self.blocks.len()
            ));
        }
        if self.step_count > cfg.horizon {
            return Some(format!(
                "step_count {} exceeds horizon {}",
                self.step_count, cfg.horizon
            ));
        }
        let grasped: Vec<&Block> = self.blocks.iter().filter(|b| b.grasped).collect();
        if grasped.len() > 1 {
            return Some(format!("{} blocks grasped at once", grasped.len()));
        }
        if self.gripper_engaged != (grasped.len() == 1) {
            return Some("gripper flag disagrees with grasped blocks".into());
        }
        if let Some(b) = grasped.first() {
            if b.cell != self.agent {
                return Some(format!(
                    "grasped block at {} but agent at {}",
                    b.cell, self.agent
                ));
            }
        }
        for (i, a) in self.blocks.iter().enumerate() {
            if !cfg.contains(a.cell) {
                return Some(format!("block {i} at {} out of bounds", a.cell));
            }
            if a.grasped {
                continue;
            }
            for b in &self.blocks[i + 1..] {
                if !b.grasped && a.cell == b.cell {
                    return Some(format!("two ungrasped blocks share {}", a.cell));
                }
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    ToggleGripper,
    NoOp,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::ToggleGripper,
        Action::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }
}

/// Task identity. Only the architect side (reward, planner) ever reads it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Hold any block.
    Grasp,
    /// Leave any block (released) on `target`.
    Place { target: Cell },
    /// All blocks released on one row, in contiguous columns.
    HLine,
    /// All blocks released on one column, in contiguous rows.
    VLine,
    /// Released blocks cover exactly `cells`.
    Shapes { cells: Vec<Cell> },
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Grasp => "grasp",
            TaskSpec::Place { .. } => "place",
            TaskSpec::HLine => "hline",
            TaskSpec::VLine => "vline",
            TaskSpec::Shapes { .. } => "shapes",
        }
    }

    pub fn validate(&self, cfg: &GridConfig) -> Result<()> {
        match self {
            TaskSpec::Place { target } if !cfg.contains(*target) => Err(Error::Config(format!(
                "place target {target} outside {}x{} grid",
                cfg.width, cfg.height
            ))),
            TaskSpec::Shapes { cells } => {
                if cells.len() != cfg.n_blocks {
                    return Err(Error::Config(format!(
                        "shape has {} cells but the world has {} blocks",
                        cells.len(),
                        cfg.n_blocks
                    )));
                }
                let mut sorted = cells.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != cells.len() {
                    return Err(Error::Config("shape cells must be distinct".into()));
                }
                if let Some(c) = cells.iter().find(|c| !cfg.contains(**c)) {
                    return Err(Error::Config(format!("shape cell {c} out of bounds")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Flat network input: `[agent_x, agent_y, gripper]` followed by
/// `[x, y, grasped]` per block, coordinates scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn norm(coord: usize, dim: usize) -> f64 {
    if dim <= 1 {
        0.0
    } else {
        coord as f64 / (dim - 1) as f64
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Spawns the agent and every block on uniformly random distinct cells.
pub fn reset<R: Rng + ?Sized>(cfg: &GridConfig, task: &TaskSpec, rng: &mut R) -> Result<EnvState> {
    cfg.validate()?;
    task.validate(cfg)?;
    loop {
        let picks = index::sample(rng, cfg.n_cells(), cfg.n_blocks + 1);
        let mut cells = picks.iter().map(|i| cfg.cell_at(i));
        let agent = cells.next().expect("sample holds at least the agent cell");
        let state = EnvState {
            agent,
            gripper_engaged: false,
            blocks: cells
                .map(|cell| Block {
                    cell,
                    grasped: false,
                })
                .collect(),
            step_count: 0,
        };
        // A Place episode must not start solved.
        if matches!(task, TaskSpec::Place { .. }) && task_success(&state, task) {
            continue;
        }
        return Ok(state);
    }
}

pub fn step(state: &EnvState, action: Action, cfg: &GridConfig) -> Result<EnvState> {
    if state.step_count >= cfg.horizon {
        return Err(Error::EpisodeExhausted {
            step_count: state.step_count,
            horizon: cfg.horizon,
        });
    }
    let mut next = state.clone();
    next.step_count += 1;
    let Cell { x, y } = state.agent;
    let moved = match action {
        Action::Up => Some(Cell::new(x, y.saturating_sub(1))),
        Action::Down => Some(Cell::new(x, (y + 1).min(cfg.height - 1))),
        Action::Left => Some(Cell::new(x.saturating_sub(1), y)),
        Action::Right => Some(Cell::new((x + 1).min(cfg.width - 1), y)),
        Action::ToggleGripper => {
            if let Some(g) = state.grasped_block() {
                if state.ungrasped_block_at(state.agent).is_none() {
                    next.blocks[g].grasped = false;
                    next.gripper_engaged = false;
                }
            } else if let Some(b) = state.ungrasped_block_at(state.agent) {
                next.blocks[b].grasped = true;
                next.gripper_engaged = true;
            }
            None
        }
        Action::NoOp => None,
    };
    if let Some(cell) = moved {
        next.agent = cell;
        if let Some(g) = next.grasped_block() {
            next.blocks[g].cell = cell;
        }
    }
    Ok(next)
}

pub fn observe(state: &EnvState, cfg: &GridConfig) -> Observation {
    let mut v = Vec::with_capacity(cfg.obs_dim());
    v.push(norm(state.agent.x, cfg.width));
    v.push(norm(state.agent.y, cfg.height));
    v.push(flag(state.gripper_engaged));
    for b in &state.blocks {
        v.push(norm(b.cell.x, cfg.width));
        v.push(norm(b.cell.y, cfg.height));
        v.push(flag(b.grasped));
    }
    Observation(v)
}

pub fn task_success(state: &EnvState, task: &TaskSpec) -> bool {
    let released = || state.blocks.iter().filter(|b| !b.grasped);
    match task {
        TaskSpec::Grasp => state.blocks.iter().any(|b| b.grasped),
        TaskSpec::Place { target } => released().any(|b| b.cell == *target),
        TaskSpec::HLine => line_success(state, |c| c.y, |c| c.x),
        TaskSpec::VLine => line_success(state, |c| c.x, |c| c.y),
        TaskSpec::Shapes { cells } => {
            if state.gripper_engaged {
                return false;
            }
            let mut have: Vec<Cell> = released().map(|b| b.cell).collect();
            let mut want = cells.clone();
            have.sort();
            want.sort();
            have == want
        }
    }
}

fn line_success(state: &EnvState, fixed: fn(Cell) -> usize, along: fn(Cell) -> usize) -> bool {
    if state.gripper_engaged {
        return false;
    }
    let Some(first) = state.blocks.first() else {
        return true;
    };
    let lane = fixed(first.cell);
    if state.blocks.iter().any(|b| fixed(b.cell) != lane) {
        return false;
    }
    // Ungrasped blocks sit on distinct cells, so a span of n-1 means contiguous.
    let (lo, hi) = state
        .blocks
        .iter()
        .map(|b| along(b.cell))
        .fold((usize::MAX, 0), |(lo, hi), p| (lo.min(p), hi.max(p)));
    hi - lo + 1 == state.blocks.len()
}

/// Sparse reward for the transition `prev --action--> next`.
///
/// Returns `(1.0, true)` on the first transition into a success state, and
/// `(0.0, done)` otherwise where `done` flags success or the horizon.
pub fn reward(
    prev: &EnvState,
    _action: Action,
    next: &EnvState,
    task: &TaskSpec,
    cfg: &GridConfig,
) -> (f64, bool) {
    let solved = task_success(next, task);
    if solved && !task_success(prev, task) {
        (1.0, true)
    } else {
        (0.0, solved || next.step_count >= cfg.horizon)
    }
}

/// One character per cell, rows separated by newlines (no trailing newline).
///
/// `A` agent, `b` released block, `G` agent carrying a block, `.` empty.
/// Overlaps the four basic symbols cannot express use `@` (agent standing on
/// a released block) and `&` (agent carrying a block over a released block).
pub fn render_ascii(state: &EnvState, cfg: &GridConfig) -> String {
    let mut grid = vec![vec!['.'; cfg.width]; cfg.height];
    for b in state.blocks.iter().filter(|b| !b.grasped) {
        grid[b.cell.y][b.cell.x] = 'b';
    }
    let Cell { x, y } = state.agent;
    grid[y][x] = match (state.gripper_engaged, grid[y][x] == 'b') {
        (false, false) => 'A',
        (false, true) => '@',
        (true, false) => 'G',
        (true, true) => '&',
    };
    grid.into_iter()
        .map(|row| row.into_iter().collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`render_ascii`]. Rows may be separated by newlines or `/`.
/// Blocks are numbered in row-major order; a carried block is listed where
/// it is encountered. Returns `(width, height, state)` with a zero clock.
pub fn parse_ascii(text: &str) -> Result<(usize, usize, EnvState)> {
    let rows: Vec<&str> = text
        .split(['\n', '/'])
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .collect();
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.chars().count());
    if height == 0 || width == 0 {
        return Err(Error::Argument("empty grid".into()));
    }
    let mut agent = None;
    let mut gripper_engaged = false;
    let mut blocks = Vec::new();
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::Argument(format!("row {y} is not {width} wide")));
        }
        for (x, ch) in row.chars().enumerate() {
            let cell = Cell::new(x, y);
            let (has_agent, carrying, released) = match ch {
                '.' => (false, false, false),
                'b' => (false, false, true),
                'A' => (true, false, false),
                '@' => (true, false, true),
                'G' => (true, true, false),
                '&' => (true, true, true),
                other => {
                    return Err(Error::Argument(format!(
                        "unexpected character {other:?} at {cell}"
                    )))
                }
            };
            if has_agent {
                if agent.replace(cell).is_some() {
                    return Err(Error::Argument("more than one agent".into()));
                }
                gripper_engaged = carrying;
            }
            if carrying {
                blocks.push(Block {
                    cell,
                    grasped: true,
                });
            }
            if released {
                blocks.push(Block {
                    cell,
                    grasped: false,
                });
            }
        }
    }
    let agent = agent.ok_or_else(|| Error::Argument("no agent on the grid".into()))?;
    Ok((
        width,
        height,
        EnvState {
            agent,
            gripper_engaged,
            blocks,
            step_count: 0,
        },
    ))
}

/// Every valid layout of the world (clock at zero), blocks labelled by index.
pub fn enumerate_states(cfg: &GridConfig) -> Vec<EnvState> {
    let n = cfg.n_cells();
    let k = cfg.n_blocks;
    let mut out = Vec::new();
    for a in 0..n {
        let agent = cfg.cell_at(a);
        for placement in distinct_placements(n, k) {
            out.push(EnvState {
                agent,
                gripper_engaged: false,
                blocks: placement
                    .iter()
                    .map(|&c| Block {
                        cell: cfg.cell_at(c),
                        grasped: false,
                    })
                    .collect(),
                step_count: 0,
            });
        }
        if k == 0 {
            continue;
        }
        for held in 0..k {
            for placement in distinct_placements(n, k - 1) {
                let mut rest = placement.iter();
                let blocks = (0..k)
                    .map(|i| {
                        if i == held {
                            Block {
                                cell: agent,
                                grasped: true,
                            }
                        } else {
                            Block {
                                cell: cfg.cell_at(*rest.next().expect("k-1 cells")),
                                grasped: false,
                            }
                        }
                    })
                    .collect();
                out.push(EnvState {
                    agent,
                    gripper_engaged: true,
                    blocks,
                    step_count: 0,
                });
            }
        }
    }
    out
}

/// Ordered selections of `k` distinct values from `0..n`.
fn distinct_placements(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; n];
    fn rec(n: usize, k: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(n, k, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    rec(n, k, &mut current, &mut used, &mut out);
    out
}
