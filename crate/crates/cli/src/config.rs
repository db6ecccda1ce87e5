//! Flat TOML experiment configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use archbuild::abig::AbigConfig;
use archbuild::agents::ActMode;
use archbuild::buildworld::{Cell, GridConfig, TaskSpec};
use archbuild::mcts::MctsConfig;
use archbuild::tinynn::{AdamConfig, BcHyper};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One task name or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskList {
    One(String),
    Many(Vec<String>),
}

impl TaskList {
    pub fn names(&self) -> Vec<String> {
        match self {
            TaskList::One(t) => vec![t.clone()],
            TaskList::Many(ts) => ts.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training task(s): grasp, place, hline, vline, shapes.
    pub task: TaskList,
    /// Target cell for `place`; defaults to the grid center.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub place_target: Option<[usize; 2]>,
    /// Cells for `shapes`.
    pub shape_cells: Vec<[usize; 2]>,
    pub width: usize,
    pub height: usize,
    pub n_blocks: usize,
    pub horizon: usize,
    pub vocab_size: usize,
    pub n_iterations: usize,
    pub n_collect: usize,
    pub seeds: Vec<u64>,
    pub model_lr: f64,
    pub model_epochs: usize,
    pub builder_lr: f64,
    pub builder_epochs: usize,
    pub batch_size: usize,
    pub mcts_simulations: usize,
    pub mcts_max_depth: usize,
    pub uct_c: f64,
    pub gamma: f64,
    /// How the planner simulates the builder: sample or argmax.
    pub planner_builder_mode: ActMode,
    pub reward_scale: f64,
    pub imitate_successful_only: bool,
    pub eval_episodes: usize,
    /// How the builder acts at evaluation: sample or argmax.
    pub eval_mode: ActMode,
    pub run_no_intent: bool,
    pub run_random: bool,
    /// Unseen task evaluated with the frozen builder and model after training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_target: Option<String>,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mcts = MctsConfig::default();
        let bc = BcHyper::default();
        Self {
            task: TaskList::One("grasp".into()),
            place_target: None,
            shape_cells: Vec::new(),
            width: 5,
            height: 5,
            n_blocks: 1,
            horizon: 40,
            vocab_size: 6,
            n_iterations: 10,
            n_collect: 100,
            seeds: vec![0],
            model_lr: bc.adam.lr,
            model_epochs: bc.epochs,
            builder_lr: bc.adam.lr,
            builder_epochs: bc.epochs,
            batch_size: bc.batch_size,
            mcts_simulations: mcts.simulations,
            mcts_max_depth: mcts.max_depth,
            uct_c: mcts.uct_c,
            gamma: mcts.gamma,
            planner_builder_mode: mcts.builder_mode,
            reward_scale: 1.0,
            imitate_successful_only: false,
            eval_episodes: 100,
            eval_mode: ActMode::Sample,
            run_no_intent: true,
            run_random: true,
            transfer_target: None,
            output_dir: "runs".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key written out, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short stable identifier derived from the canonical form.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..12].to_string()
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            width: self.width,
            height: self.height,
            n_blocks: self.n_blocks,
            horizon: self.horizon,
        }
    }

    pub fn mcts(&self) -> MctsConfig {
        MctsConfig {
            simulations: self.mcts_simulations,
            max_depth: self.mcts_max_depth,
            uct_c: self.uct_c,
            gamma: self.gamma,
            builder_mode: self.planner_builder_mode,
        }
    }

    /// Resolves a task name against this config's place target and shape.
    pub fn task_spec(&self, name: &str) -> Result<TaskSpec> {
        let cell = |[x, y]: [usize; 2]| Cell::new(x, y);
        let spec = match name {
            "grasp" => TaskSpec::Grasp,
            "place" => TaskSpec::Place {
                target: cell(self.place_target.unwrap_or([self.width / 2, self.height / 2])),
            },
            "hline" => TaskSpec::HLine,
            "vline" => TaskSpec::VLine,
            "shapes" => TaskSpec::Shapes {
                cells: self.shape_cells.iter().copied().map(cell).collect(),
            },
            other => bail!("unknown task {other:?} (expected grasp, place, hline, vline or shapes)"),
        };
        Ok(spec)
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>> {
        self.task.names().iter().map(|n| self.task_spec(n)).collect()
    }

    pub fn abig(&self, seed: u64) -> Result<AbigConfig> {
        let hyper = |lr, epochs| BcHyper {
            epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
        };
        Ok(AbigConfig {
            n_iterations: self.n_iterations,
            n_collect: self.n_collect,
            env: self.grid(),
            tasks: self.tasks()?,
            vocab_size: self.vocab_size,
            model_hyper: hyper(self.model_lr, self.model_epochs),
            builder_hyper: hyper(self.builder_lr, self.builder_epochs),
            mcts: self.mcts(),
            seed,
            reward_scale: self.reward_scale,
            imitate_successful_only: self.imitate_successful_only,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bail!("seeds must be distinct");
        }
        if self.task.names().is_empty() {
            bail!("task list is empty");
        }
        if self.eval_episodes == 0 {
            bail!("eval_episodes must be >= 1");
        }
        if let Some(t) = &self.transfer_target {
            self.task_spec(t)?.validate(&self.grid())?;
        }
        self.abig(self.seeds[0])?.validate()?;
        Ok(())
    }
}
