//! `eval`, `transfer`, `oracle` and `inspect`. Each returns the text it
//! prints so tests can check it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use archbuild::abig::{InteractionTuple, Provenance, Variant};
use archbuild::agents::{ActMode, Message};
use archbuild::buildworld::{render_ascii, task_success, Action};
use archbuild::evalkit::{bfs_oracle, protocol_stats, value_iteration, EvalReport, EvalSpec, TabularMdp};
use archbuild::par::Execution;
use serde::{Deserialize, Serialize};

use crate::instance::parse_instance;
use crate::run::{
    eval_seed, evaluate_pair, evaluate_random, load_checkpoints, load_run_config, median, read_jsonl,
    variant_dir, EpisodeLine, EPISODES_FILE,
};

/// Discount used by the value-iteration oracle.
pub const ORACLE_GAMMA: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub variant: String,
    pub transfer: bool,
    pub report: EvalReport,
}

pub struct EvalOptions<'a> {
    pub task: &'a str,
    pub episodes: usize,
    pub mode: Option<ActMode>,
    /// Freeze the builder and model and plan against `task` as an unseen task.
    pub transfer: bool,
}

/// Evaluates every trained variant of every seed in a run, plus the random
/// builder, on one task.
pub fn eval_run(run_dir: &Path, opts: &EvalOptions<'_>, exec: Execution) -> Result<Vec<EvalRow>> {
    let mut cfg = load_run_config(run_dir)?;
    if let Some(mode) = opts.mode {
        cfg.eval_mode = mode;
    }
    if opts.episodes == 0 {
        bail!("--episodes must be >= 1");
    }
    let task = cfg.task_spec(opts.task)?;
    task.validate(&cfg.grid())?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let spec = EvalSpec {
            grid: cfg.grid(),
            task: task.clone(),
            vocab_size: cfg.vocab_size,
            episodes: opts.episodes,
            mode: cfg.eval_mode,
            seed: eval_seed(seed, opts.task),
        };
        let mut found = false;
        for variant in [Variant::Abig, Variant::NoIntent] {
            let dir = variant_dir(run_dir, seed, variant);
            if !dir.is_dir() {
                continue;
            }
            found = true;
            let (builder, model) = load_checkpoints(&dir)?;
            let out = evaluate_pair(&cfg, &spec, &builder, &model, opts.transfer, exec)?;
            rows.push(EvalRow {
                seed,
                variant: variant.name().into(),
                transfer: opts.transfer,
                report: out.report,
            });
        }
        if !found {
            bail!("no checkpoints for seed {seed} under {}", run_dir.display());
        }
        rows.push(EvalRow {
            seed,
            variant: Variant::Random.name().into(),
            transfer: opts.transfer,
            report: evaluate_random(&spec, exec)?.report,
        });
    }
    let kind = if opts.transfer { "transfer" } else { "eval" };
    let lines: Vec<String> = rows.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
    fs::write(run_dir.join(format!("{kind}-{}.jsonl", opts.task)), lines.join("\n") + "\n")?;
    Ok(rows)
}

pub fn format_eval(rows: &[EvalRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>6}  {:<10} {:<8} {:>8} {:>8} {:>8}", "seed", "variant", "task", "episodes", "success", "mean_len");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6}  {:<10} {:<8} {:>8} {:>8.3} {:>8.2}",
            r.seed, r.variant, r.report.task, r.report.episodes, r.report.success_rate, r.report.mean_len
        );
    }
    let mut by_variant: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_variant.entry(&r.variant).or_default().push(r.report.success_rate);
    }
    let random = by_variant.get("random").cloned().and_then(|mut v| median(&mut v));
    for (variant, mut v) in by_variant {
        let m = median(&mut v).unwrap_or(0.0);
        let _ = write!(s, "median success {variant}: {m:.3}");
        if let (Some(r), true) = (random, variant != "random") {
            if r > 0.0 {
                let _ = write!(s, " ({:.2}x random)", m / r);
            }
        }
        s.push('\n');
    }
    s
}

/// BFS and value-iteration results for one described instance.
pub fn oracle(instance: &str) -> Result<String> {
    let inst = parse_instance(instance)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "instance: {}x{}, {} block(s), task {}",
        inst.grid.width,
        inst.grid.height,
        inst.grid.n_blocks,
        inst.task.name()
    );
    let _ = writeln!(s, "{}", render_ascii(&inst.state, &inst.grid));
    match bfs_oracle(&inst.state, &inst.task, &inst.grid)? {
        Some(n) => {
            let _ = writeln!(s, "bfs optimal length: {n}");
        }
        None => {
            let _ = writeln!(s, "bfs optimal length: unreachable");
        }
    }
    match TabularMdp::from_world(&inst.grid, &inst.task) {
        Ok((mdp, states)) => {
            let v = value_iteration(&mdp, ORACLE_GAMMA, 1e-10)?;
            let greedy = mdp.greedy(&v, ORACLE_GAMMA);
            let start = states
                .iter()
                .position(|x| *x == inst.state.without_clock())
                .expect("enumeration covers every valid state");
            let mut at = start;
            let mut steps = 0;
            while !mdp.terminal[at] && steps <= mdp.len() {
                at = mdp.next[at][greedy[at].index()];
                steps += 1;
            }
            let _ = writeln!(s, "value iteration: {} states, gamma {ORACLE_GAMMA}, V*(start) = {:.6}", mdp.len(), v[start]);
            if mdp.terminal[at] {
                let _ = writeln!(s, "greedy length: {steps}");
            } else {
                let _ = writeln!(s, "greedy length: never succeeds");
            }
        }
        Err(e) => {
            let _ = writeln!(s, "value iteration: skipped ({e})");
        }
    }
    Ok(s)
}

fn action_symbol(a: Action) -> &'static str {
    match a {
        Action::Up => "up",
        Action::Down => "down",
        Action::Left => "left",
        Action::Right => "right",
        Action::ToggleGripper => "toggle",
        Action::NoOp => "noop",
    }
}

/// Protocol statistics per (seed, variant, task) and ASCII replays of the
/// first `replays` logged episodes of each group.
pub fn inspect(run_dir: &Path, replays: usize) -> Result<String> {
    let path = run_dir.join(EPISODES_FILE);
    if !path.is_file() {
        bail!("no episode log at {}", path.display());
    }
    let lines: Vec<EpisodeLine> = read_jsonl(&path)?;
    let mut groups: Vec<((u64, String, String), Vec<&EpisodeLine>)> = Vec::new();
    for l in &lines {
        let key = (l.seed, l.variant.clone(), l.episode.task.name().to_string());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(l),
            None => groups.push((key, vec![l])),
        }
    }
    let mut s = String::new();
    for ((seed, variant, task), eps) in groups {
        let successes = eps.iter().filter(|e| e.episode.success).count();
        let _ = writeln!(s, "== seed {seed} / {variant} / {task}: {} episodes, {successes} successes", eps.len());
        let provenance = if variant == Variant::Random.name() {
            Provenance::Uniform
        } else {
            Provenance::Planner
        };
        let mut tuples: Vec<InteractionTuple> = Vec::new();
        for e in &eps {
            tuples.extend(e.episode.tuples(e.vocab_size, provenance)?);
        }
        if tuples.is_empty() {
            let _ = writeln!(s, "no steps logged");
        } else {
            let st = protocol_stats(&tuples)?;
            let _ = writeln!(
                s,
                "I(M;A) = {:.4} bits, H(A|M) = {:.4} bits, H(M) = {:.4}, H(A) = {:.4}, messages seen {}/{}",
                st.mutual_information,
                st.conditional_entropy,
                st.message_entropy,
                st.action_entropy,
                st.support(),
                st.vocab_size
            );
            let _ = writeln!(s, "P(a|m)    up  down  left right toggle noop");
            for (m, row) in st.conditional.iter().enumerate() {
                match row {
                    Some(p) => {
                        let cells: Vec<String> = p.iter().map(|x| format!("{x:.2}")).collect();
                        let _ = writeln!(s, "  m{m:<3} {}", cells.join("  "));
                    }
                    None => {
                        let _ = writeln!(s, "  m{m:<3} (never sent)");
                    }
                }
            }
        }
        for e in eps.iter().take(replays) {
            let ep = &e.episode;
            let _ = writeln!(s, "-- episode {} ({})", e.index, if ep.success { "success" } else { "failure" });
            let _ = writeln!(s, "{}", render_ascii(&ep.start, &e.grid));
            for (t, step) in ep.steps.iter().enumerate() {
                let msg = Message::new(step.msg, e.vocab_size)?;
                let _ = writeln!(
                    s,
                    "t={} m{} -> {} reward {}{}",
                    t + 1,
                    msg.index(),
                    action_symbol(step.action),
                    step.reward,
                    if task_success(&step.state, &ep.task) { " (solved)" } else { "" }
                );
                let _ = writeln!(s, "{}", render_ascii(&step.state, &e.grid));
            }
        }
    }
    Ok(s)
}
