//! Seeded 12×12 grid games sharing one four-action space.
//!
//! Actions: `0` noop, `1` left/up, `2` right/down, `3` fire (noop in every game).
//! Observations stack the previous and current frame: shape `[2, 12, 12]`,
//! agent cells at 1.0, ball 0.5, fruit 0.75, obstacles 0.25, background 0.

mod games;
mod oracle;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::epsilon_greedy;
use crate::tensor::{Float, Tensor};

pub use games::{Catch, Game, Pong, Avoid, GRID};
pub use oracle::oracle_action;

pub const NUM_ACTIONS: usize = 4;
pub const FRAME_STACK: usize = 2;

/// Observation-to-action function used by the episode runners.
pub type Policy<'a> = dyn FnMut(&Tensor, &mut ChaCha8Rng) -> Result<usize> + 'a;

pub trait Environment: Send {
    fn name(&self) -> &'static str;

    fn action_count(&self) -> usize {
        NUM_ACTIONS
    }

    fn obs_shape(&self) -> [usize; 3] {
        [FRAME_STACK, GRID, GRID]
    }

    /// Upper bound on episode length in steps.
    fn max_steps(&self) -> usize;

    fn reset(&mut self, seed: u64) -> Tensor;

    fn step(&mut self, action: usize) -> Result<StepResult>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Tensor,
    pub reward: Float,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pong,
    Catch,
    Avoid,
}

impl EnvKind {
    pub const SUITE: [EnvKind; 3] = [EnvKind::Pong, EnvKind::Catch, EnvKind::Avoid];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pong => "pong",
            EnvKind::Catch => "catch",
            EnvKind::Avoid => "avoid",
        }
    }

    pub fn make(self) -> GridEnv {
        match self {
            EnvKind::Pong => GridEnv::new(self, Box::new(Pong::default())),
            EnvKind::Catch => GridEnv::new(self, Box::new(Catch::default())),
            EnvKind::Avoid => GridEnv::new(self, Box::new(Avoid::default())),
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("mini").unwrap_or(&key);
        EnvKind::SUITE
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A [`Game`] with frame stacking, action validation and terminal tracking.
pub struct GridEnv {
    kind: EnvKind,
    game: Box<dyn Game>,
    rng: ChaCha8Rng,
    previous: Vec<Float>,
    current: Vec<Float>,
    done: bool,
    steps: usize,
}

impl GridEnv {
    fn new(kind: EnvKind, game: Box<dyn Game>) -> Self {
        Self {
            kind,
            game,
            rng: ChaCha8Rng::seed_from_u64(0),
            previous: vec![0.0; GRID * GRID],
            current: vec![0.0; GRID * GRID],
            done: true,
            steps: 0,
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn game(&self) -> &dyn Game {
        self.game.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn observation(&self) -> Tensor {
        let mut data = Vec::with_capacity(FRAME_STACK * GRID * GRID);
        data.extend_from_slice(&self.previous);
        data.extend_from_slice(&self.current);
        Tensor::new(vec![FRAME_STACK, GRID, GRID], data).expect("fixed observation shape")
    }
}

impl Environment for GridEnv {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn max_steps(&self) -> usize {
        self.game.max_steps()
    }

    fn reset(&mut self, seed: u64) -> Tensor {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.game.reset(&mut self.rng);
        self.game.render(&mut self.current);
        self.previous.copy_from_slice(&self.current);
        self.done = false;
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::StepAfterTerminal);
        }
        if action >= NUM_ACTIONS {
            return Err(Error::ActionOutOfRange {
                action,
                count: NUM_ACTIONS,
            });
        }
        let (reward, mut terminal) = self.game.tick(action, &mut self.rng);
        self.steps += 1;
        if self.steps >= self.game.max_steps() {
            terminal = true;
        }
        std::mem::swap(&mut self.previous, &mut self.current);
        self.game.render(&mut self.current);
        self.done = terminal;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal,
        })
    }
}

/// One environment per task, in suite order.
pub struct ToySuite {
    pub envs: Vec<GridEnv>,
}

impl ToySuite {
    pub fn new() -> Self {
        Self::from_kinds(&EnvKind::SUITE)
    }

    pub fn from_kinds(kinds: &[EnvKind]) -> Self {
        Self {
            envs: kinds.iter().map(|k| k.make()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn kinds(&self) -> Vec<EnvKind> {
        self.envs.iter().map(|e| e.kind()).collect()
    }
}

impl Default for ToySuite {
    fn default() -> Self {
        Self::new()
    }
}

/// Reset seed of episode `index` in a run seeded with `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// Plays `episodes` full episodes and returns each episodic return.
///
/// Episode `i` resets with [`episode_seed`]`(seed, i)`; the policy gets its
/// own generator seeded from `seed`, so trajectories depend only on the seed
/// and the policy.
pub fn run_episodes(
    kind: EnvKind,
    episodes: usize,
    seed: u64,
    policy: &mut Policy<'_>,
    mut trace: Option<&mut dyn Write>,
) -> Result<Vec<Float>> {
    let mut env = kind.make();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_AC71_0175);
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut obs = env.reset(episode_seed(seed, i));
        let mut total = 0.0;
        let mut t = 0usize;
        loop {
            let action = policy(&obs, &mut rng)?;
            let step = env.step(action)?;
            if let Some(w) = trace.as_deref_mut() {
                writeln!(w, "{t} {action} {} {}", step.reward, step.terminal)?;
            }
            total += step.reward;
            t += 1;
            obs = step.observation;
            if step.terminal {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Mean episodic return of uniformly random actions.
///
/// Uses the same draw sequence as ε-greedy with ε = 1.
pub fn random_policy_baseline(kind: EnvKind, episodes: usize, seed: u64) -> Result<Float> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let mut policy = |_: &Tensor, rng: &mut ChaCha8Rng| {
        epsilon_greedy(rng, 1.0, NUM_ACTIONS, || unreachable!("random policy never queries Q"))
    };
    let r = run_episodes(kind, episodes, seed, &mut policy, None)?;
    Ok(mean(&r))
}

pub fn mean(xs: &[Float]) -> Float {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<Float>() / xs.len() as Float
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn stddev(xs: &[Float]) -> Float {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: Float = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as Float).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names() {
        assert_eq!("catch".parse::<EnvKind>().unwrap(), EnvKind::Catch);
        assert_eq!("MiniPong".parse::<EnvKind>().unwrap(), EnvKind::Pong);
        assert!(matches!("breakout".parse::<EnvKind>(), Err(Error::UnknownEnv(_))));
    }

    #[test]
    fn step_before_reset_is_terminal_error() {
        let mut env = EnvKind::Catch.make();
        assert!(matches!(env.step(0), Err(Error::StepAfterTerminal)));
    }

    #[test]
    fn out_of_range_action() {
        let mut env = EnvKind::Avoid.make();
        env.reset(1);
        assert!(matches!(env.step(4), Err(Error::ActionOutOfRange { action: 4, count: 4 })));
    }

    #[test]
    fn reset_stacks_identical_frames() {
        let mut env = EnvKind::Pong.make();
        let obs = env.reset(3);
        assert_eq!(obs.shape(), &[2, 12, 12]);
        assert_eq!(obs.data()[..144], obs.data()[144..]);
    }

    #[test]
    fn stddev_matches_hand_value() {
        assert!((stddev(&[1.0, 3.0]) - 2f64.sqrt() as Float).abs() < 1e-12);
        assert_eq!(stddev(&[4.0]), 0.0);
    }
}
