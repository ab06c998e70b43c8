//! Experience replay, exploration and Double-DQN targets.

mod replay;
mod schedule;
mod target;

use rand::Rng;

use crate::autodiff::kernels::argmax;
use crate::error::Result;
use crate::tensor::Float;

pub use replay::{ReplayBuffer, Transition};
pub use schedule::EpsilonSchedule;
pub use target::{compute_targets, double_q_target, sync_target, Batch};

/// ε-greedy selection: uniform over all actions with probability `epsilon`,
/// otherwise the greedy action (lowest index on ties).
///
/// One uniform draw decides, then one more picks the random action; the
/// Q-values are only computed on the greedy branch.
pub fn epsilon_greedy<R, F>(rng: &mut R, epsilon: Float, num_actions: usize, q_values: F) -> Result<usize>
where
    R: Rng,
    F: FnOnce() -> Result<Vec<Float>>,
{
    let u: Float = rng.random();
    if u < epsilon {
        Ok(rng.random_range(0..num_actions))
    } else {
        Ok(argmax(&q_values()?))
    }
}
