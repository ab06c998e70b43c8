use crate::autodiff::kernels::argmax;
use crate::error::{Error, Result};
use crate::qnetwork::QNetwork;
use crate::rl::replay::Transition;
use crate::spiking::ContextSignal;
use crate::tensor::{Float, Tensor};

/// Double-DQN targets from next-state Q-values of the online and target nets.
///
/// `y = r` for terminal transitions, otherwise
/// `y = r + γ · Q*(φ', argmax_a Q(φ', a))`: the online net selects, the target net evaluates.
pub fn double_q_target(
    rewards: &[Float],
    terminals: &[bool],
    q_online_next: &Tensor,
    q_target_next: &Tensor,
    gamma: Float,
) -> Result<Vec<Float>> {
    let b = rewards.len();
    if terminals.len() != b
        || q_online_next.rows() != b
        || q_online_next.shape() != q_target_next.shape()
    {
        return Err(Error::shape(
            "double_q_target",
            format!(
                "{b} rewards, {} terminals, online {:?}, target {:?}",
                terminals.len(),
                q_online_next.shape(),
                q_target_next.shape()
            ),
        ));
    }
    Ok((0..b)
        .map(|i| {
            if terminals[i] {
                rewards[i]
            } else {
                let a = argmax(q_online_next.row(i));
                rewards[i] + gamma * q_target_next.row(i)[a]
            }
        })
        .collect())
}

/// Column-stacked view of a sampled batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub phi: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<Float>,
    pub phi_next: Tensor,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let phi: Vec<&Tensor> = items.iter().map(|t| &t.phi).collect();
        let next: Vec<&Tensor> = items.iter().map(|t| &t.phi_next).collect();
        Ok(Self {
            phi: Tensor::stack(&phi)?,
            actions: items.iter().map(|t| t.action).collect(),
            rewards: items.iter().map(|t| t.reward).collect(),
            phi_next: Tensor::stack(&next)?,
            terminals: items.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Runs both networks on `φ'` (inference mode) and builds the targets.
pub fn compute_targets(
    online: &QNetwork,
    target: &QNetwork,
    batch: &Batch,
    context: &ContextSignal,
    gamma: Float,
) -> Result<Vec<Float>> {
    let q_online = online.q_batch(&batch.phi_next, context)?;
    let q_target = target.q_batch(&batch.phi_next, context)?;
    double_q_target(&batch.rewards, &batch.terminals, &q_online, &q_target, gamma)
}

/// Copies every parameter and running statistic of `online` into `target`.
pub fn sync_target(online: &QNetwork, target: &mut QNetwork) -> Result<()> {
    target.copy_from(online)
}
