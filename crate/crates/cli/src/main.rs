use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use archbuild::agents::ActMode;
use archbuild::par::Execution;
use archbuild_cli::commands::{eval_run, format_eval, inspect, oracle, EvalOptions};
use archbuild_cli::config::ExperimentConfig;
use archbuild_cli::run::{train, SUMMARY_FILE};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "archbuild", version, about = "Architect-builder iterated guiding in a block grid world")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sample,
    Argmax,
}

impl From<Mode> for ActMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sample => ActMode::Sample,
            Mode::Argmax => ActMode::Argmax,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train ABIG (and enabled baselines) for every seed, then evaluate.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed list.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained run on a task.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Evaluate frozen builders and models on an unseen task.
    Transfer {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Exact BFS and value-iteration answers for an instance such as `grasp@A../.../..b`.
    Oracle {
        #[arg(long)]
        instance: String,
    },
    /// Protocol statistics and replays from a run's episode log.
    Inspect {
        #[arg(long)]
        run: PathBuf,
        /// Episodes to replay per seed, variant and task.
        #[arg(long, default_value_t = 1)]
        replays: usize,
    },
}

fn execute(cli: Cli) -> Result<String> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Train { config, seeds, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let rows = train(&cfg, &out, exec)?;
            let mut s = format!("wrote {} ({} summary rows)\n", out.join(SUMMARY_FILE).display(), rows.len());
            for r in rows {
                s.push_str(&format!(
                    "seed {} {:<10} {:<8} success {:.3} mean_len {:.2}\n",
                    r.seed, r.variant, r.task, r.success_rate, r.mean_len
                ));
            }
            Ok(s)
        }
        Command::Eval {
            run,
            task,
            episodes,
            mode,
        } => {
            let opts = EvalOptions {
                task: &task,
                episodes,
                mode: mode.map(Into::into),
                transfer: false,
            };
            Ok(format_eval(&eval_run(&run, &opts, exec)?))
        }
        Command::Transfer {
            run,
            target,
            episodes,
            mode,
        } => {
            let opts = EvalOptions {
                task: &target,
                episodes,
                mode: mode.map(Into::into),
                transfer: true,
            };
            Ok(format_eval(&eval_run(&run, &opts, exec)?))
        }
        Command::Oracle { instance } => oracle(&instance),
        Command::Inspect { run, replays } => inspect(&run, replays),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
