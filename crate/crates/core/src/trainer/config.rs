use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::qnetwork::{ArchSpec, Profile, Variant};
use crate::rl::EpsilonSchedule;
use crate::spiking::{Surrogate, SurrogateKind, DEFAULT_THRESHOLD};
use crate::switching::SwitchConfig;
use crate::tensor::Float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub variant: Variant,
    pub profile: Profile,
    pub t_sim: usize,
    pub threshold: Float,
    pub surrogate: SurrogateKind,
    pub surrogate_width: Float,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let s = Surrogate::default();
        Self {
            variant: Variant::Add,
            profile: Profile::Paper,
            t_sim: 4,
            threshold: DEFAULT_THRESHOLD,
            surrogate: s.kind,
            surrogate_width: s.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub capacity: usize,
    pub batch_size: usize,
}

impl Default for ReplaySection {
    fn default() -> Self {
        Self {
            capacity: 1 << 20,
            batch_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationSection {
    pub epsilon_start: Float,
    pub epsilon_end: Float,
    pub decay_frames: u64,
}

impl Default for ExplorationSection {
    fn default() -> Self {
        let s = EpsilonSchedule::default();
        Self {
            epsilon_start: s.start,
            epsilon_end: s.end,
            decay_frames: s.decay_frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub sync_every: u64,
    pub gamma: Float,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            sync_every: 10_000,
            gamma: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub learning_rate: Float,
    pub beta1: Float,
    pub beta2: Float,
    pub epsilon: Float,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            learning_rate: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchingSection {
    pub policy: PolicyKind,
    /// Episodes in the parameter-change window.
    pub window: usize,
    /// Percent.
    pub threshold: Float,
    pub episodes_per_task: usize,
}

impl Default for SwitchingSection {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Adaptive,
            window: 5,
            threshold: 10.0,
            episodes_per_task: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub envs: Vec<EnvKind>,
    pub total_frames: u64,
    pub seed: u64,
    pub eval_episodes: usize,
    pub eval_epsilon: Float,
    pub eval_seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            envs: EnvKind::SUITE.to_vec(),
            total_frames: 12_000_000,
            seed: 0,
            eval_episodes: 10,
            eval_epsilon: 0.01,
            eval_seed: 1_000_003,
        }
    }
}

/// Full run configuration. [`Default`] is the full-scale setting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub replay: ReplaySection,
    pub exploration: ExplorationSection,
    pub target: TargetSection,
    pub optimizer: OptimizerSection,
    pub switching: SwitchingSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn paper() -> Self {
        Self::default()
    }

    /// Desk-scale setting for the 12×12 suite on a single CPU core.
    pub fn toy() -> Self {
        Self {
            network: NetworkSection {
                profile: Profile::Toy,
                ..NetworkSection::default()
            },
            replay: ReplaySection {
                capacity: 1 << 14,
                batch_size: 64,
            },
            exploration: ExplorationSection {
                decay_frames: 20_000,
                ..ExplorationSection::default()
            },
            target: TargetSection {
                sync_every: 1_000,
                ..TargetSection::default()
            },
            optimizer: OptimizerSection::default(),
            switching: SwitchingSection::default(),
            run: RunSection {
                total_frames: 150_000,
                ..RunSection::default()
            },
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Toy => Self::toy(),
        }
    }

    /// Parses TOML. Omitted keys take the profile's defaults, where the
    /// profile is read from `[network] profile` (full scale if absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = raw
            .get("network")
            .and_then(|n| n.get("profile"))
            .and_then(|p| p.as_str())
            .map(str::parse)
            .transpose()?
            .unwrap_or(Profile::Paper);
        let mut base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        for (section, values) in raw {
            match (base.get_mut(&section), values) {
                (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => dst.extend(src),
                (_, v) => {
                    base.insert(section, v);
                }
            }
        }
        let config: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.run.envs.is_empty() {
            return bad("run.envs must name at least one environment".into());
        }
        if self.replay.batch_size == 0 || self.replay.capacity < self.replay.batch_size {
            return bad(format!(
                "replay: need 0 < batch_size ({}) <= capacity ({})",
                self.replay.batch_size, self.replay.capacity
            ));
        }
        if !(0.0..1.0).contains(&self.target.gamma) {
            return bad(format!("target.gamma must lie in [0, 1), got {}", self.target.gamma));
        }
        if self.target.sync_every == 0 {
            return bad("target.sync_every must be positive".into());
        }
        let e = &self.exploration;
        if !(0.0..=1.0).contains(&e.epsilon_start) || !(0.0..=1.0).contains(&e.epsilon_end) {
            return bad("exploration rates must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.run.eval_epsilon) {
            return bad("run.eval_epsilon must lie in [0, 1]".into());
        }
        self.arch()?.validate()?;
        crate::switching::TaskSwitcher::new(self.switch_config(), self.run.envs.len())?;
        Ok(())
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        let n = &self.network;
        let mut spec = ArchSpec::for_profile(n.profile, n.variant);
        spec.t_sim = n.t_sim;
        spec.threshold = n.threshold;
        spec.surrogate = Surrogate {
            kind: n.surrogate,
            width: n.surrogate_width,
        };
        spec.context_dim = self.run.envs.len();
        if let Some(d) = spec.dendrites.as_mut() {
            d.context_dim = self.run.envs.len();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.exploration.epsilon_start,
            end: self.exploration.epsilon_end,
            decay_frames: self.exploration.decay_frames,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.optimizer.learning_rate,
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            eps: self.optimizer.epsilon,
        }
    }

    pub fn switch_config(&self) -> SwitchConfig {
        match self.switching.policy {
            PolicyKind::Adaptive => SwitchConfig::Adaptive {
                k: self.switching.window,
                threshold: self.switching.threshold,
            },
            PolicyKind::Fixed => SwitchConfig::fixed(self.switching.episodes_per_task),
        }
    }
}
