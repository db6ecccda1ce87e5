//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! (run with `--nocapture` to see them) and fails if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use archbuild::abig::{abig_train, run_modeling_frame, Buffer, BufferRole};
use archbuild::agents::{fit_builder_model, ActMode, ActionProbs, BuilderBehavior, Message};
use archbuild::buildworld::{
    observe, reset, reward, step, task_success, Action, Cell, EnvState, GridConfig, Observation, TaskSpec, N_ACTIONS,
};
use archbuild::evalkit::{bfs_oracle, value_iteration, TabularMdp};
use archbuild::mcts::{MctsConfig, Planner};
use archbuild::par::Execution;
use archbuild::tinynn::{grad_check, BcHyper, Batch, MlpParams};
use archbuild_cli::config::ExperimentConfig;
use archbuild_cli::run::{median_success, train};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn gradients() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let in_dim = rng.gen_range(1..=8);
        let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=12)).collect();
        let n_out = rng.gen_range(2..=6);
        let mut params = MlpParams::init_with_hidden(&mut rng, in_dim, &hidden, n_out);
        let b = Uniform::new(-0.5, 0.5);
        for layer in &mut params.layers {
            layer.bias.mapv_inplace(|_| b.sample(&mut rng));
        }
        let n = rng.gen_range(1..=8);
        let u = Uniform::new(-1.0, 1.0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..in_dim).map(|_| u.sample(&mut rng)).collect()).collect();
        let targets = (0..n).map(|_| rng.gen_range(0..n_out)).collect();
        let batch = Batch::new(&rows, targets).unwrap();
        worst = worst.max(grad_check(&params, &batch).unwrap());
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(worst < 1e-4 && secs < 10.0, format!("max rel err {worst:.2e} over 100 draws in {secs:.1}s"))
}

fn environment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut steps = 0usize;
    let mut violations = 0usize;
    let mut replay_mismatches = 0usize;
    let mut episodes = 0usize;
    while steps < 100_000 {
        let (w, h) = (rng.gen_range(2..=6), rng.gen_range(1..=6));
        let n_blocks = rng.gen_range(0..=(w * h - 1).min(4));
        let grid = GridConfig::new(w, h, n_blocks, rng.gen_range(1..=30)).unwrap();
        let task = match rng.gen_range(0..4) {
            0 => TaskSpec::Grasp,
            1 => TaskSpec::Place {
                target: Cell::new(rng.gen_range(0..w), rng.gen_range(0..h)),
            },
            2 => TaskSpec::HLine,
            _ => TaskSpec::VLine,
        };
        let start = reset(&grid, &task, &mut rng).unwrap();
        let mut s = start.clone();
        let mut log: Vec<(Action, EnvState)> = Vec::new();
        let mut ret = 0.0;
        loop {
            let a = Action::ALL[rng.gen_range(0..N_ACTIONS)];
            let n = step(&s, a, &grid).unwrap();
            steps += 1;
            let flags_changed = n.blocks.iter().zip(&s.blocks).any(|(p, q)| p.grasped != q.grasped);
            if n.invariant_violation(&grid).is_some()
                || n.blocks.len() != s.blocks.len()
                || (flags_changed && a != Action::ToggleGripper)
            {
                violations += 1;
            }
            let (r, done) = reward(&s, a, &n, &task, &grid);
            ret += r;
            log.push((a, n.clone()));
            s = n;
            if done {
                break;
            }
        }
        if ret != 0.0 && ret != 1.0 {
            violations += 1;
        }
        let mut replay = start;
        for (a, want) in &log {
            replay = step(&replay, *a, &grid).unwrap();
            if replay != *want {
                replay_mismatches += 1;
            }
        }
        episodes += 1;
    }
    verdict(
        violations == 0 && replay_mismatches == 0,
        format!("{steps} steps over {episodes} episodes, {violations} violations, {replay_mismatches} replay mismatches"),
    )
}

/// Message `i` means action `i mod 6`.
struct Scripted;

impl BuilderBehavior for Scripted {
    fn action_probs(&self, _: &Observation, msg: Message) -> archbuild::Result<ActionProbs> {
        let mut p = [0.0; N_ACTIONS];
        p[msg.index() % N_ACTIONS] = 1.0;
        Ok(p)
    }
}

fn argmax(p: &ActionProbs) -> usize {
    (1..N_ACTIONS).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

fn behavioral_cloning() -> Verdict {
    let started = Instant::now();
    let grid = GridConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut buffer = Buffer::new(BufferRole::Modeling);
    while buffer.len() < 2000 {
        let (frame, _) = run_modeling_frame(&Scripted, &grid, &[TaskSpec::Grasp], 6, 20, &mut rng).unwrap();
        for t in frame.tuples().iter().take(2000 - buffer.len()) {
            buffer.push(t.clone());
        }
    }
    let (model, _) = fit_builder_model(&buffer, grid.obs_dim(), 6, &BcHyper::default(), &mut rng).unwrap();
    let hits = buffer
        .tuples()
        .iter()
        .filter(|t| argmax(&model.action_probs(&t.obs, t.msg).unwrap()) == t.action.index())
        .count();
    let acc = hits as f64 / buffer.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    verdict(acc >= 0.99 && secs < 30.0, format!("argmax accuracy {acc:.4} on 2000 tuples in {secs:.1}s"))
}

/// Message `m` at `(x, y)` on a 4×4 grid means action `(m + x + 2y) mod 6`.
struct Code;

fn coded(obs: &Observation, m: usize) -> Action {
    let x = (obs.values()[0] * 3.0).round() as usize;
    let y = (obs.values()[1] * 3.0).round() as usize;
    Action::ALL[(m + x + 2 * y) % N_ACTIONS]
}

impl BuilderBehavior for Code {
    fn action_probs(&self, obs: &Observation, msg: Message) -> archbuild::Result<ActionProbs> {
        let mut p = [0.0; N_ACTIONS];
        p[coded(obs, msg.index()).index()] = 1.0;
        Ok(p)
    }
}

fn enumerated_q(s: &EnvState, m: usize, depth: usize, gamma: f64, grid: &GridConfig, task: &TaskSpec) -> f64 {
    let n = step(s, coded(&observe(s, grid), m), grid).unwrap();
    let solved = task_success(&n, task);
    let r = if solved && !task_success(s, task) { 1.0 } else { 0.0 };
    if solved || n.step_count >= grid.horizon || depth == 1 {
        return r;
    }
    r + gamma * (0..4).map(|k| enumerated_q(&n, k, depth - 1, gamma, grid, task)).fold(f64::NEG_INFINITY, f64::max)
}

fn planner_vs_enumeration() -> Verdict {
    let started = Instant::now();
    let grid = GridConfig::new(4, 4, 1, 40).unwrap();
    let task = TaskSpec::Grasp;
    let cfg = MctsConfig {
        simulations: 20_000,
        max_depth: 6,
        builder_mode: ActMode::Argmax,
        ..MctsConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut hits = 0;
    for _ in 0..50 {
        let s = reset(&grid, &task, &mut rng).unwrap();
        let m = Planner::new(&Code, grid, 4, cfg).unwrap().plan(&s, &task, &mut rng).unwrap().index();
        let best = (0..4).map(|k| enumerated_q(&s, k, 6, cfg.gamma, &grid, &task)).fold(f64::NEG_INFINITY, f64::max);
        if (enumerated_q(&s, m, 6, cfg.gamma, &grid, &task) - best).abs() < 1e-9 {
            hits += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(hits >= 48 && secs < 120.0, format!("{hits}/50 root choices optimal in {secs:.1}s"))
}

fn cross_oracle() -> Verdict {
    let grid = GridConfig::new(3, 3, 1, 40).unwrap();
    let task = TaskSpec::Grasp;
    let gamma = 0.95;
    let (mdp, states) = TabularMdp::from_world(&grid, &task).unwrap();
    let v = value_iteration(&mdp, gamma, 1e-12).unwrap();
    let policy = mdp.greedy(&v, gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut agree = 0;
    for _ in 0..20 {
        let s = reset(&grid, &task, &mut rng).unwrap();
        let mut at = states.iter().position(|x| *x == s).unwrap();
        let mut len = 0;
        while !mdp.terminal[at] && len <= mdp.len() {
            at = mdp.next[at][policy[at].index()];
            len += 1;
        }
        if mdp.terminal[at] && bfs_oracle(&s, &task, &grid).unwrap() == Some(len) {
            agree += 1;
        }
    }
    verdict(agree == 20, format!("{agree}/20 greedy lengths equal BFS"))
}

fn ablation() -> Verdict {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(&config_path("grasp_ablation.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = train(&cfg, dir.path(), Execution::default()).unwrap();
    let med = |v: &str| median_success(&rows, v, "grasp").unwrap();
    let (abig, no_intent, random) = (med("abig"), med("no_intent"), med("random"));
    let mins = started.elapsed().as_secs_f64() / 60.0;
    verdict(
        abig > no_intent && no_intent > random && abig >= 0.9 && mins < 30.0,
        format!(
            "median success abig {abig:.3}, no_intent {no_intent:.3}, random {random:.3} over {} seeds in {mins:.1} min",
            cfg.seeds.len()
        ),
    )
}

fn transfer() -> Verdict {
    let cfg = ExperimentConfig::load(&config_path("transfer_hline.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = train(&cfg, dir.path(), Execution::default()).unwrap();
    let abig = median_success(&rows, "abig", "hline").unwrap();
    let random = median_success(&rows, "random", "hline").unwrap();
    verdict(
        abig >= 3.0 * random,
        format!("median hline success {abig:.3} vs random builder {random:.3} ({:.2}x)", abig / random),
    )
}

fn reward_blindness() -> Verdict {
    let cfg = ExperimentConfig::load(&config_path("reward_scale.toml")).unwrap();
    let base = cfg.abig(cfg.seeds[0]).unwrap();
    let scaled = archbuild::abig::AbigConfig {
        reward_scale: 7.0 * base.reward_scale,
        ..base.clone()
    };
    let (a, b) = (abig_train(&base).unwrap(), abig_train(&scaled).unwrap());
    let digests = |r: &archbuild::abig::RunArtifacts| -> Vec<String> {
        let mut d = vec![r.initial_builder_digest.clone()];
        d.extend(r.frames().iter().map(|f| f.builder_digest.clone()));
        d.push(r.builder.digest());
        d
    };
    let (da, db) = (digests(&a), digests(&b));
    let same = da.iter().zip(&db).filter(|(x, y)| x == y).count();
    verdict(
        da == db,
        format!("{same}/{} builder hashes identical under reward x7", da.len()),
    )
}

fn determinism() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let config = config_path("smoke.toml");
    let mut files = Vec::new();
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_archbuild"))
            .args(["train", "--config", config.to_str().unwrap(), "--out", d.path().to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        files.push(fs::read(d.path().join("metrics.jsonl")).unwrap());
    }
    verdict(
        !files[0].is_empty() && files[0] == files[1],
        format!("metrics.jsonl {} vs {} bytes, identical: {}", files[0].len(), files[1].len(), files[0] == files[1]),
    )
}

#[test]
#[ignore = "trains full runs; run with --ignored"]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("1 gradient check", gradients),
        ("2 environment properties and replay", environment),
        ("3 scripted builder recovery", behavioral_cloning),
        ("4 planner vs exhaustive enumeration", planner_vs_enumeration),
        ("5 value iteration vs BFS", cross_oracle),
        ("6 ablation ordering on grasp", ablation),
        ("7 transfer to hline", transfer),
        ("8 reward blindness", reward_blindness),
        ("9 byte-identical metrics", determinism),
    ];
    let mut lines = Vec::new();
    for (name, check) in criteria {
        let v = check();
        let line = format!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        println!("{line}");
        lines.push((v.pass, line));
    }
    let failed: Vec<&str> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
