//! Training runs and the files they leave behind.
//!
//! ```text
//! <out>/config.toml        canonical config
//! <out>/metrics.jsonl      one MetricsRecord per frame, ordered by (seed, variant, iteration, frame)
//! <out>/summary.csv        run, seed, variant, task, success_rate, mean_len
//! <out>/episodes.jsonl     evaluation episodes, one per line
//! <out>/timings.jsonl      wall-clock per phase (the only nondeterministic file)
//! <out>/seed-<s>/<variant>/{builder,model}.json
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use archbuild::abig::{abig_train, train_no_intent, Episode, FrameKind, RunArtifacts, Variant};
use archbuild::agents::{BuilderModel, BuilderPolicy, PolicyCheckpoint, UniformBuilder};
use archbuild::buildworld::{GridConfig, TaskSpec};
use archbuild::evalkit::{evaluate, transfer_eval, EvalOutcome, EvalSpec, Guide};
use archbuild::par::Execution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run: String,
    pub seed: u64,
    pub variant: Variant,
    pub iteration: usize,
    pub frame: FrameKind,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
    pub mean_len: Option<f64>,
    pub buffer_size: usize,
    pub fit_size: usize,
    /// Which network the frame's fit trained: `model` or `builder`.
    pub loss_role: String,
    pub bc_loss: Option<f64>,
    pub fit_steps: usize,
    pub builder_digest: String,
    pub model_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub seed: u64,
    pub variant: String,
    pub task: String,
    pub success_rate: f64,
    pub mean_len: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLine {
    pub seed: u64,
    pub variant: String,
    pub index: usize,
    pub vocab_size: usize,
    pub grid: GridConfig,
    pub episode: Episode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TimingRecord {
    seed: u64,
    variant: String,
    phase: String,
    ms: u128,
}

#[derive(Default)]
struct SeedOutput {
    metrics: Vec<MetricsRecord>,
    rows: Vec<SummaryRow>,
    episodes: Vec<EpisodeLine>,
    timings: Vec<TimingRecord>,
}

pub fn variant_dir(run_dir: &Path, seed: u64, variant: Variant) -> PathBuf {
    run_dir.join(format!("seed-{seed}")).join(variant.name())
}

/// Evaluation seed shared by every variant, so all of them face the same
/// start states.
pub fn eval_seed(seed: u64, task: &str) -> u64 {
    let digest = Sha256::digest(format!("eval/{seed}/{task}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn metrics_for(run: &str, artifacts: &RunArtifacts) -> Vec<MetricsRecord> {
    artifacts
        .frames()
        .into_iter()
        .map(|f| MetricsRecord {
            run: run.to_string(),
            seed: artifacts.seed,
            variant: artifacts.variant,
            iteration: f.iteration,
            frame: f.frame,
            episodes: f.stats.episodes,
            successes: f.stats.successes,
            success_rate: f.stats.success_rate,
            mean_len: f.stats.mean_len,
            buffer_size: f.buffer_size,
            fit_size: f.fit_size,
            loss_role: match f.frame {
                FrameKind::Guiding => "builder".into(),
                FrameKind::Modeling | FrameKind::FinalModeling => "model".into(),
            },
            bc_loss: f.bc_loss,
            fit_steps: f.fit_steps,
            builder_digest: f.builder_digest.clone(),
            model_digest: f.model_digest.clone(),
        })
        .collect()
}

pub fn save_checkpoints(dir: &Path, builder: &BuilderPolicy, model: &BuilderModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("builder.json"), serde_json::to_string(&builder.net().checkpoint("builder"))?)?;
    fs::write(dir.join("model.json"), serde_json::to_string(&model.net().checkpoint("model"))?)?;
    Ok(())
}

pub fn load_checkpoints(dir: &Path) -> Result<(BuilderPolicy, BuilderModel)> {
    let read = |name: &str| -> Result<PolicyCheckpoint> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).with_context(|| format!("missing checkpoint {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed checkpoint {}", path.display()))
    };
    let builder = BuilderPolicy::new(read("builder.json")?.to_net()?);
    let model = BuilderModel::new(read("model.json")?.to_net()?);
    Ok((builder, model))
}

/// Training tasks followed by the transfer target, if it is a new task.
pub fn eval_tasks(cfg: &ExperimentConfig) -> Result<Vec<(String, TaskSpec, bool)>> {
    let mut out: Vec<(String, TaskSpec, bool)> = Vec::new();
    for name in cfg.task.names() {
        if !out.iter().any(|(n, _, _)| *n == name) {
            out.push((name.clone(), cfg.task_spec(&name)?, false));
        }
    }
    if let Some(t) = &cfg.transfer_target {
        if !out.iter().any(|(n, _, _)| n == t) {
            out.push((t.clone(), cfg.task_spec(t)?, true));
        }
    }
    Ok(out)
}

fn eval_spec(cfg: &ExperimentConfig, seed: u64, name: &str, task: &TaskSpec, episodes: usize) -> EvalSpec {
    EvalSpec {
        grid: cfg.grid(),
        task: task.clone(),
        vocab_size: cfg.vocab_size,
        episodes,
        mode: cfg.eval_mode,
        seed: eval_seed(seed, name),
    }
}

/// Evaluates a trained pair: planned guidance on training tasks, frozen
/// transfer on an unseen one.
pub fn evaluate_pair(
    cfg: &ExperimentConfig,
    spec: &EvalSpec,
    builder: &BuilderPolicy,
    model: &BuilderModel,
    transfer: bool,
    exec: Execution,
) -> Result<EvalOutcome> {
    let out = if transfer {
        transfer_eval(builder, model, cfg.mcts(), spec, exec)?
    } else {
        let guide = Guide::Planner {
            model,
            mcts: cfg.mcts(),
            reward_scale: cfg.reward_scale,
        };
        evaluate(guide, builder, spec, exec)?
    };
    Ok(out)
}

pub fn evaluate_random(spec: &EvalSpec, exec: Execution) -> Result<EvalOutcome> {
    Ok(evaluate(Guide::Uniform, &UniformBuilder, spec, exec)?)
}

fn record(out: &mut SeedOutput, run: &str, seed: u64, variant: Variant, name: &str, outcome: EvalOutcome, cfg: &ExperimentConfig) {
    out.rows.push(SummaryRow {
        run: run.to_string(),
        seed,
        variant: variant.name().to_string(),
        task: name.to_string(),
        success_rate: outcome.report.success_rate,
        mean_len: outcome.report.mean_len,
    });
    for (index, episode) in outcome.episodes.into_iter().enumerate() {
        out.episodes.push(EpisodeLine {
            seed,
            variant: variant.name().to_string(),
            index,
            vocab_size: cfg.vocab_size,
            grid: cfg.grid(),
            episode,
        });
    }
}

fn run_seed(cfg: &ExperimentConfig, run: &str, out_dir: &Path, seed: u64, exec: Execution) -> Result<SeedOutput> {
    let abig_cfg = cfg.abig(seed)?;
    let tasks = eval_tasks(cfg)?;
    let mut out = SeedOutput::default();
    let time = |out: &mut SeedOutput, variant: Variant, phase: &str, start: Instant| {
        out.timings.push(TimingRecord {
            seed,
            variant: variant.name().to_string(),
            phase: phase.to_string(),
            ms: start.elapsed().as_millis(),
        })
    };
    let mut variants = vec![Variant::Abig];
    if cfg.run_no_intent {
        variants.push(Variant::NoIntent);
    }
    for variant in variants {
        let start = Instant::now();
        let artifacts = match variant {
            Variant::NoIntent => train_no_intent(&abig_cfg)?,
            _ => abig_train(&abig_cfg)?,
        };
        time(&mut out, variant, "train", start);
        out.metrics.extend(metrics_for(run, &artifacts));
        save_checkpoints(&variant_dir(out_dir, seed, variant), &artifacts.builder, &artifacts.model)?;
        let start = Instant::now();
        for (name, task, transfer) in &tasks {
            let spec = eval_spec(cfg, seed, name, task, cfg.eval_episodes);
            let outcome = evaluate_pair(cfg, &spec, &artifacts.builder, &artifacts.model, *transfer, exec)?;
            record(&mut out, run, seed, variant, name, outcome, cfg);
        }
        time(&mut out, variant, "eval", start);
    }
    if cfg.run_random {
        let start = Instant::now();
        for (name, task, _) in &tasks {
            let spec = eval_spec(cfg, seed, name, task, cfg.eval_episodes);
            let outcome = evaluate_random(&spec, exec)?;
            record(&mut out, run, seed, Variant::Random, name, outcome, cfg);
        }
        time(&mut out, Variant::Random, "eval", start);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = reader.deserialize().collect::<Result<Vec<SummaryRow>, _>>()?;
    Ok(rows)
}

/// Trains every seed (in parallel under `exec`), evaluates, and writes the
/// run directory. Returns the summary rows.
pub fn train(cfg: &ExperimentConfig, out_dir: &Path, exec: Execution) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml())?;
    let run = cfg.run_id();
    let outputs = exec.try_map(cfg.seeds.clone(), |seed| {
        run_seed(cfg, &run, out_dir, seed, exec).with_context(|| format!("seed {seed}"))
    })?;
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    let mut timings = Vec::new();
    for o in outputs {
        metrics.extend(o.metrics);
        rows.extend(o.rows);
        episodes.extend(o.episodes);
        timings.extend(o.timings);
    }
    write_jsonl(&out_dir.join(METRICS_FILE), &metrics)?;
    write_jsonl(&out_dir.join(EPISODES_FILE), &episodes)?;
    write_jsonl(&out_dir.join(TIMINGS_FILE), &timings)?;
    let mut w = csv::Writer::from_path(out_dir.join(SUMMARY_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Loads the config a run directory was trained with.
pub fn load_run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    if !run_dir.is_dir() {
        bail!("no run directory at {}", run_dir.display());
    }
    ExperimentConfig::load(&run_dir.join(CONFIG_FILE))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Median success over seeds for one variant and task.
pub fn median_success(rows: &[SummaryRow], variant: &str, task: &str) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant && r.task == task)
        .map(|r| r.success_rate)
        .collect();
    median(&mut v)
}
