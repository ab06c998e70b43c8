//! Integrate-and-fire dynamics, surrogate gradients and active-dendrite gating.
//!
//! Membrane update per simulation step:
//!
//! ```text
//! V(t) = V(t-1) + f(I(t), max_j d_jᵀc)      f(I, d) = I · sigmoid(d)
//! s(t) = 1 if V(t) > V_th else 0
//! V(t) ← 0 where s(t) = 1                    (hard reset)
//! ```
//!
//! The spike nonlinearity is replaced by a surrogate derivative during
//! backpropagation. In *relaxed* mode the forward pass uses the smooth
//! primitive of that surrogate instead of the step, so finite differences
//! of the forward agree with the backward pass exactly.

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{argmax, sigmoid};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const DEFAULT_THRESHOLD: Float = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Rectangular,
    Atan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub kind: SurrogateKind,
    pub width: Float,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Atan,
            width: 1.0,
        }
    }
}

impl Surrogate {
    pub fn rectangular(width: Float) -> Self {
        Self {
            kind: SurrogateKind::Rectangular,
            width,
        }
    }

    pub fn atan(width: Float) -> Self {
        Self {
            kind: SurrogateKind::Atan,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!(
                "surrogate width must be positive, got {}",
                self.width
            )));
        }
        Ok(())
    }

    /// Pseudo-derivative of the spike function at `x = V - V_th`.
    ///
    /// Both kernels integrate to one over their support.
    pub fn derivative(&self, x: Float) -> Float {
        let w = self.width;
        match self.kind {
            SurrogateKind::Rectangular => {
                if x.abs() < w / 2.0 {
                    1.0 / w
                } else {
                    0.0
                }
            }
            SurrogateKind::Atan => {
                let z = std::f64::consts::PI as Float * w * x;
                w / (1.0 + z * z)
            }
        }
    }

    /// Smooth stand-in for the Heaviside step whose derivative is [`Self::derivative`].
    pub fn relaxed(&self, x: Float) -> Float {
        let w = self.width;
        match self.kind {
            SurrogateKind::Rectangular => ((x + w / 2.0) / w).clamp(0.0, 1.0),
            SurrogateKind::Atan => {
                let pi = std::f64::consts::PI as Float;
                0.5 + (pi * w * x).atan() / pi
            }
        }
    }
}

/// Spike derivative used by the backward pass.
pub fn spike_backward(surrogate: &Surrogate, v: Float, threshold: Float) -> Float {
    surrogate.derivative(v - threshold)
}

/// Membrane potentials of one IF layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneState {
    pub potential: Vec<Float>,
    pub threshold: Float,
    pub step: usize,
}

impl MembraneState {
    pub fn new(neurons: usize, threshold: Float) -> Self {
        Self {
            potential: vec![0.0; neurons],
            threshold,
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.potential.iter_mut().for_each(|v| *v = 0.0);
        self.step = 0;
    }
}

/// Advances every neuron by one step and returns the binary spike vector.
pub fn if_step(state: &mut MembraneState, input: &[Float]) -> Vec<Float> {
    debug_assert_eq!(state.potential.len(), input.len());
    let th = state.threshold;
    let spikes = state
        .potential
        .iter_mut()
        .zip(input)
        .map(|(v, &i)| {
            *v += i;
            if *v > th {
                *v = 0.0;
                1.0
            } else {
                0.0
            }
        })
        .collect();
    state.step += 1;
    spikes
}

/// Runs IF dynamics over `steps` steps on a `[rows, neurons]` slab.
///
/// `input` either holds one slab per step (`steps * neurons` values) or a
/// single slab replayed every step (`neurons` values, direct coding).
/// Returns `(spikes, pre-reset potentials)`, both `steps * neurons` long.
pub(crate) fn if_forward(
    input: &[Float],
    neurons: usize,
    steps: usize,
    threshold: Float,
    relax: Option<&Surrogate>,
) -> (Vec<Float>, Vec<Float>) {
    let broadcast = input.len() == neurons;
    let mut v = vec![0.0; neurons];
    let mut spikes = Vec::with_capacity(steps * neurons);
    let mut v_pre = Vec::with_capacity(steps * neurons);
    for t in 0..steps {
        let x = if broadcast {
            input
        } else {
            &input[t * neurons..(t + 1) * neurons]
        };
        for (vn, xn) in v.iter_mut().zip(x) {
            let vp = *vn + xn;
            let s = match relax {
                None => {
                    if vp > threshold {
                        1.0
                    } else {
                        0.0
                    }
                }
                Some(sur) => sur.relaxed(vp - threshold),
            };
            v_pre.push(vp);
            spikes.push(s);
            *vn = vp * (1.0 - s);
        }
    }
    (spikes, v_pre)
}

/// Backpropagation through time for [`if_forward`], including the reset path.
pub(crate) fn if_backward(
    grad_spikes: &[Float],
    spikes: &[Float],
    v_pre: &[Float],
    neurons: usize,
    steps: usize,
    threshold: Float,
    surrogate: &Surrogate,
    broadcast: bool,
) -> Vec<Float> {
    let mut dx = vec![0.0; if broadcast { neurons } else { steps * neurons }];
    // gradient w.r.t. the post-reset potential carried into the next step
    let mut carry = vec![0.0; neurons];
    for t in (0..steps).rev() {
        let off = t * neurons;
        for n in 0..neurons {
            let i = off + n;
            let s = spikes[i];
            let vp = v_pre[i];
            let dv_post = carry[n];
            let ds = grad_spikes[i] - dv_post * vp;
            let dv_pre = dv_post * (1.0 - s) + ds * surrogate.derivative(vp - threshold);
            if broadcast {
                dx[n] += dv_pre;
            } else {
                dx[i] = dv_pre;
            }
            carry[n] = dv_pre;
        }
    }
    dx
}

/// One-hot task identifier fed to the dendritic segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSignal {
    values: Vec<Float>,
    task: usize,
}

impl ContextSignal {
    pub fn one_hot(task: usize, tasks: usize) -> Result<Self> {
        if task >= tasks {
            return Err(Error::Config(format!(
                "task {task} out of range for {tasks} contexts"
            )));
        }
        let mut values = vec![0.0; tasks];
        values[task] = 1.0;
        Ok(Self { values, task })
    }

    pub fn values(&self) -> &[Float] {
        &self.values
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DendriteSharing {
    /// One segment bank per neuron.
    Neuron,
    /// A single bank shared by the whole layer.
    Layer,
}

/// Shape of a dendrite bank, independent of its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DendriteSpec {
    pub segments: usize,
    pub context_dim: usize,
    pub sharing: DendriteSharing,
}

impl DendriteSpec {
    pub fn param_count(&self, neurons: usize) -> usize {
        let banks = match self.sharing {
            DendriteSharing::Neuron => neurons,
            DendriteSharing::Layer => 1,
        };
        banks * self.segments * self.context_dim
    }

    pub fn tensor_shape(&self, neurons: usize) -> Vec<usize> {
        match self.sharing {
            DendriteSharing::Neuron => vec![neurons, self.segments, self.context_dim],
            DendriteSharing::Layer => vec![self.segments, self.context_dim],
        }
    }
}

/// Dendritic segment weights `d` of shape `[banks, J, C]` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DendriteBank {
    pub spec: DendriteSpec,
    pub weights: Tensor,
}

/// Winning segment and gating factor of one bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub segment: usize,
    pub activation: Float,
    pub factor: Float,
}

/// Picks `argmax_j d_jᵀc` for every bank in a flat `[banks, J, C]` weight slice.
pub(crate) fn select_segments(
    weights: &[Float],
    segments: usize,
    context: &[Float],
) -> Vec<Gate> {
    let c = context.len();
    let banks = weights.len() / (segments * c);
    let mut scores = vec![0.0; segments];
    (0..banks)
        .map(|b| {
            for (j, s) in scores.iter_mut().enumerate() {
                let d = &weights[(b * segments + j) * c..(b * segments + j + 1) * c];
                *s = d.iter().zip(context).map(|(w, x)| w * x).sum();
            }
            let segment = argmax(&scores);
            let activation = scores[segment];
            Gate {
                segment,
                activation,
                factor: sigmoid(activation),
            }
        })
        .collect()
}

impl DendriteBank {
    pub fn new(spec: DendriteSpec, neurons: usize, weights: Tensor) -> Result<Self> {
        let want = spec.tensor_shape(neurons);
        if weights.shape() != want.as_slice() {
            return Err(Error::shape(
                "dendrite_bank",
                format!("expected {want:?}, got {:?}", weights.shape()),
            ));
        }
        Ok(Self { spec, weights })
    }

    pub fn gates(&self, context: &ContextSignal) -> Result<Vec<Gate>> {
        if context.len() != self.spec.context_dim {
            return Err(Error::ContextLength {
                expected: self.spec.context_dim,
                got: context.len(),
            });
        }
        Ok(select_segments(
            self.weights.data(),
            self.spec.segments,
            context.values(),
        ))
    }
}

/// Scales the feedforward drive by `sigmoid(max_j d_jᵀc)` of the matching bank.
pub fn dendritic_modulate(
    input: &[Float],
    bank: &DendriteBank,
    context: &ContextSignal,
) -> Result<Vec<Float>> {
    let gates = bank.gates(context)?;
    Ok(input
        .iter()
        .enumerate()
        .map(|(n, x)| x * gates[if gates.len() == 1 { 0 } else { n }].factor)
        .collect())
}

/// Direct input coding: the observation is injected unchanged at every step.
pub fn encode_input(observation: &Tensor, steps: usize) -> Vec<Tensor> {
    assert!(steps >= 1, "simulation needs at least one step");
    vec![observation.clone(); steps]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_threshold_accumulates() {
        let mut s = MembraneState::new(1, 1.0);
        let out = if_step(&mut s, &[0.5]);
        assert_eq!(out, vec![0.0]);
        assert_eq!(s.potential, vec![0.5]);
    }

    #[test]
    fn crossing_threshold_spikes_and_resets() {
        let mut s = MembraneState::new(1, 1.0);
        s.potential[0] = 0.6;
        let out = if_step(&mut s, &[0.6]);
        assert_eq!(out, vec![1.0]);
        assert_eq!(s.potential, vec![0.0]);
    }

    #[test]
    fn exactly_at_threshold_does_not_spike() {
        let mut s = MembraneState::new(1, 1.0);
        assert_eq!(if_step(&mut s, &[1.0]), vec![0.0]);
    }

    #[test]
    fn quiescent_without_input() {
        let mut s = MembraneState::new(3, 1.0);
        s.potential = vec![0.2, -0.3, 0.9];
        for _ in 0..4 {
            assert_eq!(if_step(&mut s, &[0.0; 3]), vec![0.0; 3]);
        }
        assert_eq!(s.potential, vec![0.2, -0.3, 0.9]);
        assert_eq!(s.step, 4);
    }

    #[test]
    fn rectangular_window() {
        let r = Surrogate::rectangular(1.0);
        assert_eq!(spike_backward(&r, 1.0, 1.0), 1.0);
        assert_eq!(spike_backward(&r, 1.7, 1.0), 0.0);
        assert_eq!(spike_backward(&r, 0.6, 1.0), 1.0);
    }

    #[test]
    fn atan_peaks_at_threshold() {
        let a = Surrogate::atan(2.0);
        let peak = spike_backward(&a, 1.0, 1.0);
        assert!((peak - 2.0).abs() <= 1e-12);
        for dv in [-0.3, -0.01, 0.01, 0.3] {
            assert!(spike_backward(&a, 1.0 + dv, 1.0) < peak);
            let l = spike_backward(&a, 1.0 - dv, 1.0);
            let r = spike_backward(&a, 1.0 + dv, 1.0);
            assert!((l - r).abs() < 1e-15);
        }
    }

    #[test]
    fn surrogates_integrate_to_one() {
        for sur in [Surrogate::rectangular(0.8), Surrogate::atan(1.0)] {
            // trapezoid over a wide window; atan tails decay like 1/x^2
            let (lo, hi, n) = (-2000.0, 2000.0, 4_000_000);
            let h = (hi - lo) / n as Float;
            let mut acc = 0.0;
            for i in 0..=n {
                let x = lo + i as Float * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                acc += w * sur.derivative(x);
            }
            assert!((acc * h - 1.0).abs() < 1e-3, "{sur:?}: {}", acc * h);
        }
    }

    #[test]
    fn relaxed_is_primitive_of_derivative() {
        let sur = Surrogate::atan(1.0);
        for x in [-1.0, -0.2, 0.0, 0.3, 2.0] {
            let h = 1e-6;
            let fd = (sur.relaxed(x + h) - sur.relaxed(x - h)) / (2.0 * h);
            assert!((fd - sur.derivative(x)).abs() < 1e-8);
        }
    }

    fn bank(weights: Vec<Float>) -> DendriteBank {
        let spec = DendriteSpec {
            segments: 2,
            context_dim: 2,
            sharing: DendriteSharing::Layer,
        };
        DendriteBank::new(spec, 1, Tensor::new(vec![2, 2], weights).unwrap()).unwrap()
    }

    #[test]
    fn zero_dendrites_halve_the_drive() {
        let b = bank(vec![0.0; 4]);
        let c = ContextSignal::one_hot(0, 2).unwrap();
        assert_eq!(dendritic_modulate(&[1.0, -2.0], &b, &c).unwrap(), vec![0.5, -1.0]);
    }

    #[test]
    fn winning_segment_depends_on_context() {
        let b = bank(vec![2.0, 0.0, 0.0, -2.0]);
        let c0 = ContextSignal::one_hot(0, 2).unwrap();
        let out = dendritic_modulate(&[1.0], &b, &c0).unwrap();
        assert!((out[0] - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert_eq!(b.gates(&c0).unwrap()[0].segment, 0);

        let c1 = ContextSignal::one_hot(1, 2).unwrap();
        let g = b.gates(&c1).unwrap()[0];
        assert_eq!(g.segment, 0);
        assert_eq!(g.activation, 0.0);
        assert_eq!(dendritic_modulate(&[1.0], &b, &c1).unwrap(), vec![0.5]);
    }

    #[test]
    fn wrong_context_length_is_rejected() {
        let b = bank(vec![0.0; 4]);
        let c = ContextSignal::one_hot(0, 3).unwrap();
        assert!(matches!(
            dendritic_modulate(&[1.0], &b, &c),
            Err(Error::ContextLength { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn direct_coding_repeats_observation() {
        let obs = Tensor::from_vec(vec![0.25, 0.5]);
        let seq = encode_input(&obs, 4);
        assert_eq!(seq.len(), 4);
        assert!(seq.iter().all(|t| t == &obs));
        assert_eq!(encode_input(&obs, 1).len(), 1);
    }

    #[test]
    fn layer_forward_matches_single_neuron_stepping() {
        let input: Vec<Float> = vec![0.4, 0.7, -0.2, 1.3, 0.5, 0.9];
        let (spikes, _) = if_forward(&input, 2, 3, 1.0, None);
        let mut state = MembraneState::new(2, 1.0);
        for t in 0..3 {
            let s = if_step(&mut state, &input[t * 2..t * 2 + 2]);
            assert_eq!(&spikes[t * 2..t * 2 + 2], s.as_slice());
        }
    }
}
