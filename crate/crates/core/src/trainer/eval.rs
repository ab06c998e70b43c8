use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::envs::{mean, run_episodes, stddev, EnvKind, Environment};
use crate::error::{Error, Result};
use crate::qnetwork::QNetwork;
use crate::rl::epsilon_greedy;
use crate::spiking::ContextSignal;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub env: EnvKind,
    pub mean: Float,
    pub stddev: Float,
    pub returns: Vec<Float>,
}

impl std::fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {:.3} ± {:.3} over {} episodes",
            self.env,
            self.mean,
            self.stddev,
            self.returns.len()
        )
    }
}

/// ε-greedy rollouts of `net` on `env` with the context of task `task` out of `tasks`.
///
/// Episode seeds and the action generator derive from `seed` exactly as in
/// [`crate::envs::random_policy_baseline`], so `epsilon = 1` reproduces it.
pub fn evaluate(
    net: &QNetwork,
    env: EnvKind,
    task: usize,
    tasks: usize,
    episodes: usize,
    epsilon: Float,
    seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let probe = env.make();
    let spec = net.spec();
    if probe.obs_shape() != spec.input || probe.action_count() != spec.num_actions {
        return Err(Error::StructureMismatch(format!(
            "network expects {:?} with {} actions, `{env}` produces {:?} with {}",
            spec.input,
            spec.num_actions,
            probe.obs_shape(),
            probe.action_count()
        )));
    }
    let ctx = ContextSignal::one_hot(task, tasks)?;
    let actions = spec.num_actions;
    let mut policy = |obs: &Tensor, rng: &mut ChaCha8Rng| {
        epsilon_greedy(rng, epsilon, actions, || net.q_forward(obs, &ctx))
    };
    let returns = run_episodes(env, episodes, seed, &mut policy, None)?;
    Ok(EvalSummary {
        env,
        mean: mean(&returns),
        stddev: stddev(&returns),
        returns,
    })
}

/// Loads a checkpoint and evaluates it on `env`, using the task index the
/// run assigned to that environment.
pub fn evaluate_checkpoint(
    path: &Path,
    env: EnvKind,
    episodes: usize,
    epsilon: Float,
    seed: u64,
) -> Result<EvalSummary> {
    let (net, header) = checkpoint::load(path)?;
    let tasks = header.envs.len().max(1);
    let task = header.envs.iter().position(|e| e == env.name()).unwrap_or(0);
    evaluate(&net, env, task, tasks, episodes, epsilon, seed)
}
