use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand_chacha::ChaCha8Rng;

use spikeq::envs::{self, oracle_action, EnvKind};
use spikeq::qnetwork::{ArchSpec, Profile, QNetwork, Variant};
use spikeq::rl::epsilon_greedy;
use spikeq::trainer::{self, plot, RunConfig};
use spikeq::Tensor;

#[derive(Parser)]
#[command(name = "spikeq", version, about = "Multi-task spiking Q-learning on a toy grid suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics, decision log and checkpoints.
    Train {
        /// TOML run configuration; the toy profile when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics, decision log and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Override the frame budget.
        #[arg(long)]
        frames: Option<u64>,
    },
    /// Evaluate a checkpoint on one environment.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// pong, catch or avoid.
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Exploration rate during evaluation.
        #[arg(long, default_value_t = 0.01)]
        epsilon: spikeq::Float,
        #[arg(long, default_value_t = 1_000_003)]
        seed: u64,
    },
    /// Train adaptive and fixed-interval switching on several seeds and compare.
    Compare {
        /// TOML run configuration; the toy profile when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated list of at least three seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
    /// Print the trainable parameter count of an architecture.
    CountParams {
        /// dqn, dsqn, dqn_d, dsqn_d or add.
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value = "paper")]
        profile: Profile,
    },
    /// Print a complete configuration file for a profile.
    Config {
        #[arg(long, default_value = "toy")]
        profile: Profile,
    },
    /// Render a learning-curve SVG from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Moving-average window in episodes.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    /// Play scripted or random episodes, optionally dumping every step.
    Rollout {
        /// pong, catch or avoid.
        #[arg(long)]
        env: String,
        #[arg(long, value_parser = ["random", "oracle"], default_value = "random")]
        policy: String,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write `t action reward terminal` lines to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::toy()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            out,
            frames,
        } => {
            let mut c = load_config(config.as_ref())?;
            if let Some(s) = seed {
                c.run.seed = s;
            }
            if let Some(f) = frames {
                c.run.total_frames = f;
            }
            let start = Instant::now();
            let outcome = trainer::train(&c, Some(&out))?;
            println!(
                "{} frames, {} episodes, {} gradient steps in {:.1}s; outputs in {}",
                outcome.frames,
                outcome.episodes.len(),
                outcome.gradient_steps,
                start.elapsed().as_secs_f64(),
                out.display()
            );
            for (i, env) in outcome.envs.iter().enumerate() {
                let e = trainer::evaluate(
                    &outcome.network,
                    *env,
                    i,
                    outcome.envs.len(),
                    c.run.eval_episodes,
                    c.run.eval_epsilon,
                    c.run.eval_seed,
                )?;
                println!("{e}");
            }
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            epsilon,
            seed,
        } => {
            let kind: EnvKind = env.parse()?;
            let e = trainer::evaluate_checkpoint(&checkpoint, kind, episodes, epsilon, seed)
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            println!("{e}");
        }
        Command::Compare { config, seeds } => {
            let c = load_config(config.as_ref())?;
            println!("{}", trainer::compare_policies(&c, &seeds)?);
        }
        Command::CountParams { variant, profile } => {
            let net = QNetwork::build(ArchSpec::for_profile(profile, variant), 0)?;
            println!("{}", net.count_trainable());
        }
        Command::Config { profile } => {
            print!("{}", RunConfig::for_profile(profile).to_toml()?);
        }
        Command::Plot { metrics, out, window } => {
            plot::plot_file(&metrics, &out, window)?;
        }
        Command::Rollout {
            env,
            policy,
            episodes,
            seed,
            trace,
        } => {
            if episodes == 0 {
                bail!("--episodes must be at least 1");
            }
            let kind: EnvKind = env.parse()?;
            let oracle = policy == "oracle";
            let mut act = |obs: &Tensor, rng: &mut ChaCha8Rng| {
                if oracle {
                    Ok(oracle_action(kind, obs))
                } else {
                    epsilon_greedy(rng, 1.0, envs::NUM_ACTIONS, || unreachable!())
                }
            };
            let mut file = trace.map(std::fs::File::create).transpose()?;
            let returns = envs::run_episodes(
                kind,
                episodes,
                seed,
                &mut act,
                file.as_mut().map(|f| f as &mut dyn Write),
            )?;
            println!(
                "{kind} {policy}: mean {:.3} ± {:.3} over {episodes} episodes",
                envs::mean(&returns),
                envs::stddev(&returns)
            );
        }
    }
    Ok(())
}
