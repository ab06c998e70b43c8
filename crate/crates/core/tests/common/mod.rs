#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeq::autodiff::{Graph, NodeId, ParamStore};
use spikeq::{Float, Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: Float) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn norm(v: impl Iterator<Item = Float>) -> Float {
    v.map(|x| x * x).sum::<Float>().sqrt()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)`.
pub fn rel_err(a: &[Float], b: &[Float]) -> Float {
    let num = norm(a.iter().zip(b).map(|(x, y)| x - y));
    let den = norm(a.iter().copied()) + norm(b.iter().copied());
    num / den.max(1e-12)
}

/// Reduces an op output to a scalar with fixed pseudo-random weights so
/// every output element contributes a distinct amount.
fn weighted_sum(g: &mut Graph, y: NodeId) -> Result<NodeId> {
    let shape = g.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + ((i * 37) % 17) as Float / 17.0).collect())?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Central-difference check of `op` with respect to every input.
/// Returns the largest relative error across inputs.
pub fn check_op<F>(inputs: &[Tensor], op: F) -> Float
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |xs: &[Tensor]| -> Float {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let y = op(&mut g, &ids).unwrap();
        let l = if g.value(y).len() == 1 { y } else { weighted_sum(&mut g, y).unwrap() };
        g.value(l).item()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let y = op(&mut g, &ids).unwrap();
    let l = if g.value(y).len() == 1 { y } else { weighted_sum(&mut g, y).unwrap() };
    let grads = g.backward(l, &ParamStore::new()).unwrap();
    let h = 1e-6;
    let mut worst: Float = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * h));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}
