//! The multi-environment training loop, evaluation and policy comparison.

mod compare;
mod config;
mod eval;
mod metrics;
pub mod plot;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Graph};
use crate::checkpoint;
use crate::envs::{episode_seed, EnvKind, Environment, GridEnv};
use crate::error::{Error, Result};
use crate::qnetwork::{ForwardOptions, QNetwork};
use crate::rl::{compute_targets, epsilon_greedy, sync_target, Batch, EpsilonSchedule, ReplayBuffer, Transition};
use crate::spiking::ContextSignal;
use crate::switching::TaskSwitcher;
use crate::tensor::{Float, Tensor};

pub use compare::{compare_policies, CompareSummary, PolicyRow};
pub use config::{
    ExplorationSection, NetworkSection, OptimizerSection, PolicyKind, ReplaySection, RunConfig, RunSection,
    SwitchingSection, TargetSection,
};
pub use eval::{evaluate, evaluate_checkpoint, EvalSummary};
pub use metrics::{read_metrics, write_decision_log, write_metrics, EpisodeRecord};

pub const METRICS_FILE: &str = "metrics.csv";
pub const DECISIONS_FILE: &str = "decisions.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const SWITCH_CHECKPOINT: &str = "switch_latest.ckpt";

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub envs: Vec<EnvKind>,
    pub episodes: Vec<EpisodeRecord>,
    /// Global frame counts after which the target network was refreshed.
    pub syncs: Vec<u64>,
    pub frames: u64,
    pub gradient_steps: u64,
}

impl TrainOutcome {
    pub fn env_names(&self) -> Vec<String> {
        self.envs.iter().map(|e| e.name().to_string()).collect()
    }
}

/// The episode in progress on the active environment.
struct Episode {
    env: usize,
    index: usize,
    phi: Tensor,
    ret: Float,
    loss_sum: Float,
    loss_count: usize,
}

/// Online and target networks, replay buffers and the switching policy.
pub struct Trainer {
    config: RunConfig,
    kinds: Vec<EnvKind>,
    envs: Vec<GridEnv>,
    buffers: Vec<ReplayBuffer>,
    contexts: Vec<ContextSignal>,
    online: QNetwork,
    target: QNetwork,
    adam: Adam,
    switcher: TaskSwitcher,
    schedule: EpsilonSchedule,
    rng: ChaCha8Rng,
    episode_counts: Vec<usize>,
    frame: u64,
    gradient_steps: u64,
    syncs: Vec<u64>,
    current: Option<Episode>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: RunConfig, out_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let arch = config.arch()?;
        let kinds = config.run.envs.clone();
        let envs: Vec<GridEnv> = kinds.iter().map(|k| k.make()).collect();
        for env in &envs {
            if env.obs_shape() != arch.input || env.action_count() != arch.num_actions {
                return Err(Error::Config(format!(
                    "environment `{}` produces {:?} with {} actions; network expects {:?} with {}",
                    env.name(),
                    env.obs_shape(),
                    env.action_count(),
                    arch.input,
                    arch.num_actions
                )));
            }
        }
        let online = QNetwork::build(arch, config.run.seed)?;
        let mut target = online.clone();
        sync_target(&online, &mut target)?;
        let adam = Adam::new(config.adam(), online.params())?;
        let contexts = (0..kinds.len())
            .map(|i| ContextSignal::one_hot(i, kinds.len()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            buffers: (0..kinds.len()).map(|_| ReplayBuffer::new(config.replay.capacity)).collect(),
            switcher: TaskSwitcher::new(config.switch_config(), kinds.len())?,
            schedule: config.schedule(),
            rng: ChaCha8Rng::seed_from_u64(config.run.seed ^ 0xA11C_E5ED_0000_0001),
            episode_counts: vec![0; kinds.len()],
            frame: 0,
            gradient_steps: 0,
            syncs: Vec::new(),
            current: None,
            out_dir: out_dir.map(Path::to_path_buf),
            kinds,
            envs,
            contexts,
            online,
            target,
            adam,
            config,
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn env_index(&self) -> usize {
        self.switcher.env_index()
    }

    fn env_names(&self) -> Vec<String> {
        self.kinds.iter().map(|k| k.name().to_string()).collect()
    }

    fn checkpoint(&self, file: &str) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            checkpoint::save(&dir.join(file), &self.online, &self.env_names(), self.frame)?;
        }
        Ok(())
    }

    /// One gradient step on a batch from buffer `i`; `None` while the buffer is short.
    fn learn(&mut self, i: usize) -> Result<Option<Float>> {
        let batch_size = self.config.replay.batch_size;
        if self.buffers[i].len() < batch_size {
            return Ok(None);
        }
        let items = self.buffers[i].sample(batch_size, &mut self.rng)?;
        let batch = Batch::from_transitions(&items)?;
        let ctx = &self.contexts[i];
        let y = compute_targets(&self.online, &self.target, &batch, ctx, self.config.target.gamma)?;
        let mut g = Graph::new();
        let fwd = self.online.forward(&mut g, &batch.phi, ctx, ForwardOptions::TRAIN)?;
        let loss = g.mse_gather(fwd.q, &batch.actions, &y)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss, self.online.params())?;
        self.adam.step(self.online.params_mut(), &grads)?;
        self.online.absorb_batch_stats(&g, &fwd);
        self.gradient_steps += 1;
        Ok(Some(value))
    }

    pub fn is_done(&self) -> bool {
        self.frame >= self.config.run.total_frames
    }

    fn begin_episode(&mut self) -> Episode {
        let env = self.switcher.env_index();
        let index = self.episode_counts[env];
        let seed = episode_seed(self.config.run.seed.wrapping_add(env as u64 * 0x1000_0000), index);
        Episode {
            env,
            index,
            phi: self.envs[env].reset(seed),
            ret: 0.0,
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    /// Advances exactly one frame. Returns the episode record when this
    /// frame ended an episode.
    pub fn step(&mut self) -> Result<Option<EpisodeRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let frame = self.frame;
        self.step_inner().map_err(|e| Error::AtFrame {
            frame,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self) -> Result<Option<EpisodeRecord>> {
        let mut ep = match self.current.take() {
            Some(ep) => ep,
            None => self.begin_episode(),
        };
        let i = ep.env;
        let epsilon = self.schedule.value(self.frame);
        let num_actions = self.envs[i].action_count();
        let (online, ctx, phi) = (&self.online, &self.contexts[i], &ep.phi);
        let action = epsilon_greedy(&mut self.rng, epsilon, num_actions, || online.q_forward(phi, ctx))?;
        let out = self.envs[i].step(action)?;
        ep.ret += out.reward;
        let next = out.observation;
        self.buffers[i].push(Transition {
            phi: std::mem::replace(&mut ep.phi, next.clone()),
            action,
            reward: out.reward,
            phi_next: next,
            terminal: out.terminal,
        });
        if let Some(loss) = self.learn(i)? {
            ep.loss_sum += loss;
            ep.loss_count += 1;
        }
        self.frame += 1;
        if self.frame % self.config.target.sync_every == 0 {
            sync_target(&self.online, &mut self.target)?;
            self.syncs.push(self.frame);
        }
        if out.terminal {
            self.finish_episode(ep).map(Some)
        } else {
            self.current = Some(ep);
            Ok(None)
        }
    }

    fn finish_episode(&mut self, ep: Episode) -> Result<EpisodeRecord> {
        let i = ep.env;
        self.episode_counts[i] += 1;
        let online = &self.online;
        let decision = self.switcher.on_episode_end(|| online.theta())?;
        let record = EpisodeRecord {
            frame: self.frame,
            env: self.kinds[i].name().to_string(),
            env_index: i,
            episode: ep.index,
            episode_return: ep.ret,
            loss_mean: (ep.loss_count > 0).then(|| ep.loss_sum / ep.loss_count as Float),
            epsilon: self.schedule.value(self.frame - 1),
            delta_theta: decision.delta_theta,
            switched: decision.switched,
        };
        if decision.switched {
            self.checkpoint(SWITCH_CHECKPOINT)?;
        }
        Ok(record)
    }

    /// Trains until the frame budget is exhausted.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut episodes = Vec::new();
        while !self.is_done() {
            if let Some(r) = self.step()? {
                episodes.push(r);
            }
        }
        if let Some(dir) = &self.out_dir {
            write_metrics(&dir.join(METRICS_FILE), &episodes)?;
            write_decision_log(&dir.join(DECISIONS_FILE), &episodes)?;
        }
        self.checkpoint(FINAL_CHECKPOINT)?;
        Ok(TrainOutcome {
            envs: self.kinds,
            network: self.online,
            episodes,
            syncs: self.syncs,
            frames: self.frame,
            gradient_steps: self.gradient_steps,
        })
    }
}

/// Trains per `config`, writing metrics, decision log and checkpoints into
/// `out_dir` when given.
pub fn train(config: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    Trainer::new(config.clone(), out_dir)?.run()
}
