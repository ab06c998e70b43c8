//! Episode-boundary task switching: the parameter-change policy and the
//! fixed-interval baseline.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Float;

/// Relative L2 change in percent: `100 · ‖θ_t − θ_ref‖ / ‖θ_ref‖`.
pub fn delta_theta(theta_t: &[Float], theta_ref: &[Float]) -> Result<Float> {
    if theta_t.len() != theta_ref.len() {
        return Err(Error::LengthMismatch(theta_t.len(), theta_ref.len()));
    }
    let mut diff = 0.0;
    let mut reference = 0.0;
    for (a, b) in theta_t.iter().zip(theta_ref) {
        let d = a - b;
        diff += d * d;
        reference += b * b;
    }
    if reference == 0.0 {
        return Err(Error::ZeroNormReference);
    }
    Ok(100.0 * diff.sqrt() / reference.sqrt())
}

/// Round-robin successor of environment index `i`.
pub fn next_env(i: usize, count: usize) -> usize {
    (i + 1) % count.max(1)
}

/// Sliding window of the last `K` per-episode parameter snapshots.
#[derive(Debug, Clone)]
pub struct ParamHistory {
    k: usize,
    window: VecDeque<Vec<Float>>,
}

impl ParamHistory {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("history window K must be positive".into()));
        }
        Ok(Self {
            k,
            window: VecDeque::with_capacity(k),
        })
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.k
    }

    pub fn push(&mut self, theta: Vec<Float>) {
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(theta);
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }

    pub fn oldest(&self) -> Option<&[Float]> {
        self.window.front().map(Vec::as_slice)
    }

    pub fn newest(&self) -> Option<&[Float]> {
        self.window.back().map(Vec::as_slice)
    }

    /// Δθ between newest and oldest entries once the window is full.
    pub fn delta(&self) -> Result<Option<Float>> {
        match (self.is_full(), self.newest(), self.oldest()) {
            (true, Some(new), Some(old)) => delta_theta(new, old).map(Some),
            _ => Ok(None),
        }
    }
}

/// Outcome of one episode-end check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchDecision {
    /// `None` while the window is still filling (or for the fixed baseline).
    pub delta_theta: Option<Float>,
    pub switched: bool,
    pub threshold: Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchConfig {
    Adaptive { k: usize, threshold: Float },
    Fixed { episodes_per_task: usize },
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig::Adaptive {
            k: 5,
            threshold: 10.0,
        }
    }
}

impl SwitchConfig {
    pub fn fixed(episodes_per_task: usize) -> Self {
        SwitchConfig::Fixed { episodes_per_task }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SwitchConfig::Adaptive { .. } => "adaptive",
            SwitchConfig::Fixed { .. } => "fixed",
        }
    }
}

/// Switches once Δθ across the last `K` episodes drops below `threshold` percent.
#[derive(Debug, Clone)]
pub struct AdaptivePolicy {
    pub threshold: Float,
    history: ParamHistory,
}

impl AdaptivePolicy {
    pub fn new(k: usize, threshold: Float) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config(format!("switch threshold must be positive, got {threshold}")));
        }
        Ok(Self {
            threshold,
            history: ParamHistory::new(k)?,
        })
    }

    pub fn history(&self) -> &ParamHistory {
        &self.history
    }

    pub fn on_episode_end(&mut self, theta: Vec<Float>) -> Result<SwitchDecision> {
        self.history.push(theta);
        let delta = self.history.delta()?;
        let switched = matches!(delta, Some(d) if d < self.threshold);
        if switched {
            self.history.clear();
        }
        Ok(SwitchDecision {
            delta_theta: delta,
            switched,
            threshold: self.threshold,
        })
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

/// Switches after every `episodes_per_task` completed episodes.
#[derive(Debug, Clone)]
pub struct FixedIntervalPolicy {
    pub episodes_per_task: usize,
    count: usize,
}

impl FixedIntervalPolicy {
    pub fn new(episodes_per_task: usize) -> Result<Self> {
        if episodes_per_task == 0 {
            return Err(Error::Config("episodes_per_task must be positive".into()));
        }
        Ok(Self {
            episodes_per_task,
            count: 0,
        })
    }

    pub fn on_episode_end(&mut self) -> SwitchDecision {
        self.count += 1;
        let switched = self.count == self.episodes_per_task;
        if switched {
            self.count = 0;
        }
        SwitchDecision {
            delta_theta: None,
            switched,
            threshold: Float::INFINITY,
        }
    }

    pub fn reset(&mut self) {
        self.count = 0;
    }
}

/// Either policy plus the current environment index.
#[derive(Debug, Clone)]
pub struct TaskSwitcher {
    policy: Policy,
    env_index: usize,
    env_count: usize,
}

#[derive(Debug, Clone)]
enum Policy {
    Adaptive(AdaptivePolicy),
    Fixed(FixedIntervalPolicy),
}

impl TaskSwitcher {
    pub fn new(config: SwitchConfig, env_count: usize) -> Result<Self> {
        if env_count == 0 {
            return Err(Error::Config("at least one environment is required".into()));
        }
        let policy = match config {
            SwitchConfig::Adaptive { k, threshold } => Policy::Adaptive(AdaptivePolicy::new(k, threshold)?),
            SwitchConfig::Fixed { episodes_per_task } => {
                Policy::Fixed(FixedIntervalPolicy::new(episodes_per_task)?)
            }
        };
        Ok(Self {
            policy,
            env_index: 0,
            env_count,
        })
    }

    pub fn env_index(&self) -> usize {
        self.env_index
    }

    /// The snapshot closure is only invoked by the adaptive policy.
    pub fn on_episode_end(&mut self, theta: impl FnOnce() -> Vec<Float>) -> Result<SwitchDecision> {
        let decision = match &mut self.policy {
            Policy::Adaptive(p) => p.on_episode_end(theta())?,
            Policy::Fixed(p) => p.on_episode_end(),
        };
        if decision.switched {
            self.env_index = next_env(self.env_index, self.env_count);
        }
        Ok(decision)
    }
}
