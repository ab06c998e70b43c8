//! Q-network builders for the DQN / DSQN families, dueling heads and
//! active-dendrite gating.
//!
//! Layer order: `[conv → batchnorm → IF]×L → flatten → FC → (dendrites) → IF → head`.
//! Non-spiking variants use a rectifier where the IF layers sit and run a
//! single step. Dueling variants duplicate the FC + head pair into a value
//! stream (one output) and an advantage stream (one output per action).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNorm, Conv2d, Graph, Linear, NodeId, ParamId, ParamStore, RunningStats, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::spiking::{ContextSignal, DendriteSharing, DendriteSpec, Surrogate, DEFAULT_THRESHOLD};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dqn,
    Dsqn,
    DqnD,
    DsqnD,
    /// Spiking, dueling, with active dendrites.
    Add,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Dqn, Variant::Dsqn, Variant::DqnD, Variant::DsqnD, Variant::Add];

    pub fn spiking(self) -> bool {
        matches!(self, Variant::Dsqn | Variant::DsqnD | Variant::Add)
    }

    pub fn dueling(self) -> bool {
        matches!(self, Variant::DqnD | Variant::DsqnD | Variant::Add)
    }

    pub fn dendritic(self) -> bool {
        matches!(self, Variant::Add)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dqn => "dqn",
            Variant::Dsqn => "dsqn",
            Variant::DqnD => "dqn_d",
            Variant::DsqnD => "dsqn_d",
            Variant::Add => "add",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size Atari configuration.
    Paper,
    /// Desk-scale configuration for the toy suite.
    Toy,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "toy" => Ok(Profile::Toy),
            _ => Err(Error::Config(format!("unknown profile `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn conv(out_channels: usize, kernel: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        out_channels,
        kernel,
        stride,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub variant: Variant,
    /// `(channels, height, width)` of one observation.
    pub input: [usize; 3],
    pub num_actions: usize,
    pub context_dim: usize,
    pub conv_plan: Vec<ConvSpec>,
    pub fc_width: usize,
    pub spiking: bool,
    pub dueling: bool,
    pub dendrites: Option<DendriteSpec>,
    pub t_sim: usize,
    pub threshold: Float,
    pub surrogate: Surrogate,
}

impl ArchSpec {
    /// Four stacked 84×84 frames, 18 actions, three tasks.
    ///
    /// The `add` variant carries a layer-shared bank of 6 segments over a
    /// 3-dimensional context: 18 dendritic parameters.
    pub fn paper(variant: Variant) -> Self {
        Self::with_variant(
            variant,
            [4, 84, 84],
            18,
            3,
            vec![conv(32, 8, 4), conv(64, 4, 2), conv(64, 3, 1)],
            512,
            DendriteSpec {
                segments: 6,
                context_dim: 3,
                sharing: DendriteSharing::Layer,
            },
        )
    }

    /// Two stacked 12×12 frames, 4 actions, three tasks, per-neuron dendrites.
    pub fn toy(variant: Variant) -> Self {
        Self::with_variant(
            variant,
            [2, 12, 12],
            4,
            3,
            vec![conv(8, 4, 2), conv(16, 3, 1)],
            32,
            DendriteSpec {
                segments: 4,
                context_dim: 3,
                sharing: DendriteSharing::Neuron,
            },
        )
    }

    pub fn for_profile(profile: Profile, variant: Variant) -> Self {
        match profile {
            Profile::Paper => Self::paper(variant),
            Profile::Toy => Self::toy(variant),
        }
    }

    fn with_variant(
        variant: Variant,
        input: [usize; 3],
        num_actions: usize,
        context_dim: usize,
        conv_plan: Vec<ConvSpec>,
        fc_width: usize,
        dendrites: DendriteSpec,
    ) -> Self {
        Self {
            variant,
            input,
            num_actions,
            context_dim,
            conv_plan,
            fc_width,
            spiking: variant.spiking(),
            dueling: variant.dueling(),
            dendrites: variant.dendritic().then_some(dendrites),
            t_sim: 4,
            threshold: DEFAULT_THRESHOLD,
            surrogate: Surrogate::default(),
        }
    }

    /// Spatial sizes after every conv layer.
    pub fn feature_sizes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let [_, mut h, mut w] = self.input;
        let mut out = Vec::with_capacity(self.conv_plan.len());
        for (i, c) in self.conv_plan.iter().enumerate() {
            if c.kernel == 0 || c.stride == 0 || c.out_channels == 0 {
                return Err(Error::Config(format!("conv{}: zero-sized layer", i + 1)));
            }
            if c.kernel > h || c.kernel > w {
                return Err(Error::Config(format!(
                    "conv{}: kernel {} larger than input {h}x{w}",
                    i + 1,
                    c.kernel
                )));
            }
            h = (h - c.kernel) / c.stride + 1;
            w = (w - c.kernel) / c.stride + 1;
            out.push((c.out_channels, h, w));
        }
        Ok(out)
    }

    pub fn flatten_size(&self) -> Result<usize> {
        let sizes = self.feature_sizes()?;
        Ok(match sizes.last() {
            Some((c, h, w)) => c * h * w,
            None => self.input.iter().product(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.spiking != self.variant.spiking() || self.dueling != self.variant.dueling() {
            return Err(Error::Config(format!(
                "variant `{}` requires spiking={} dueling={}",
                self.variant.name(),
                self.variant.spiking(),
                self.variant.dueling()
            )));
        }
        match (&self.dendrites, self.variant.dendritic()) {
            (Some(_), false) => {
                return Err(Error::Config(format!(
                    "dendrites are not part of variant `{}`",
                    self.variant.name()
                )))
            }
            (None, true) => {
                return Err(Error::Config("variant `add` requires a dendrite bank".into()))
            }
            _ => {}
        }
        if let Some(d) = &self.dendrites {
            if !self.spiking {
                return Err(Error::Config("dendrites require spiking neurons".into()));
            }
            if d.segments == 0 || d.context_dim != self.context_dim {
                return Err(Error::Config(format!(
                    "dendrite bank {d:?} inconsistent with context dimension {}",
                    self.context_dim
                )));
            }
        }
        if self.num_actions == 0 || self.fc_width == 0 || self.context_dim == 0 {
            return Err(Error::Config("actions, fc width and context must be positive".into()));
        }
        if self.t_sim == 0 {
            return Err(Error::Config("t_sim must be at least 1".into()));
        }
        if self.conv_plan.is_empty() {
            return Err(Error::Config("at least one conv layer is required".into()));
        }
        self.surrogate.validate()?;
        self.feature_sizes()?;
        Ok(())
    }

    /// Simulation steps actually run by a forward pass.
    pub fn steps(&self) -> usize {
        if self.spiking {
            self.t_sim
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running estimates are refreshed by [`QNetwork::absorb_batch_stats`].
    Train,
    /// Running estimates only.
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub bn: BnMode,
    /// Replace spikes by the surrogate primitive (gradient checking).
    pub relaxed: bool,
}

impl ForwardOptions {
    pub const TRAIN: Self = Self {
        bn: BnMode::Train,
        relaxed: false,
    };
    pub const INFERENCE: Self = Self {
        bn: BnMode::Inference,
        relaxed: false,
    };
}

/// Nodes of interest produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub q: NodeId,
    pub bn_nodes: Vec<NodeId>,
    /// Per-stream `(hidden pre-activation, head output)` nodes.
    pub streams: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone)]
struct Stream {
    hidden: Linear,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct QNetwork {
    spec: ArchSpec,
    params: ParamStore,
    convs: Vec<(Conv2d, BatchNorm)>,
    running: Vec<RunningStats>,
    /// `[q]`, or `[value, advantage]` for dueling variants.
    streams: Vec<Stream>,
    dendrites: Option<ParamId>,
}

impl QNetwork {
    pub fn build(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut convs = Vec::new();
        let mut running = Vec::new();
        let mut in_ch = spec.input[0];
        for (i, c) in spec.conv_plan.iter().enumerate() {
            let layer = Conv2d::new(
                &mut params,
                &mut rng,
                &format!("conv{}", i + 1),
                in_ch,
                c.out_channels,
                c.kernel,
                c.stride,
            )?;
            let bn = BatchNorm::new(&mut params, &format!("bn{}", i + 1), c.out_channels);
            running.push(RunningStats::new(c.out_channels));
            convs.push((layer, bn));
            in_ch = c.out_channels;
        }
        let flat = spec.flatten_size()?;
        let heads: Vec<(&str, usize)> = if spec.dueling {
            vec![("value", 1), ("advantage", spec.num_actions)]
        } else {
            vec![("q", spec.num_actions)]
        };
        let streams = heads
            .into_iter()
            .map(|(name, out)| Stream {
                hidden: Linear::new(&mut params, &mut rng, &format!("{name}.fc"), flat, spec.fc_width),
                head: Linear::new(&mut params, &mut rng, &format!("{name}.out"), spec.fc_width, out),
            })
            .collect();
        let dendrites = spec.dendrites.map(|d| {
            let shape = d.tensor_shape(spec.fc_width);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            params.add("dendrites", Tensor::from_parts(shape, data))
        });
        Ok(Self {
            spec,
            params,
            convs,
            running,
            streams,
            dendrites,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    pub fn dendrite_param(&self) -> Option<ParamId> {
        self.dendrites
    }

    /// Sum of trainable scalars; batch-norm running estimates are excluded.
    pub fn count_trainable(&self) -> usize {
        self.params.num_scalars()
    }

    /// Trainable parameters flattened in registration order.
    pub fn theta(&self) -> Vec<Float> {
        self.params.flatten()
    }

    /// Records the forward pass for a `[batch, c, h, w]` (or single `[c, h, w]`) observation.
    pub fn forward(
        &self,
        g: &mut Graph,
        observation: &Tensor,
        context: &ContextSignal,
        opts: ForwardOptions,
    ) -> Result<Forward> {
        let spec = &self.spec;
        let obs = match observation.shape().len() {
            3 => {
                let mut s = vec![1];
                s.extend_from_slice(observation.shape());
                observation.clone().reshape(&s)?
            }
            _ => observation.clone(),
        };
        if obs.shape().len() != 4 || obs.shape()[1..] != spec.input {
            return Err(Error::shape(
                "observation",
                format!("expected [batch, {:?}], got {:?}", spec.input, observation.shape()),
            ));
        }
        if spec.dendrites.is_some() && context.len() != spec.context_dim {
            return Err(Error::ContextLength {
                expected: spec.context_dim,
                got: context.len(),
            });
        }
        let steps = spec.steps();
        let p = &self.params;
        let mut h = g.input("observation", obs);
        let mut stepped = false;
        let mut bn_nodes = Vec::with_capacity(self.convs.len());
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            h = conv.forward(g, p, h)?;
            let running = match opts.bn {
                BnMode::Train => None,
                BnMode::Inference => Some(&self.running[i]),
            };
            h = bn.forward(g, p, h, running)?;
            bn_nodes.push(h);
            h = self.activate(g, h, &mut stepped, opts)?;
        }
        h = g.flatten(h)?;
        let mut outs = Vec::with_capacity(self.streams.len());
        let mut streams = Vec::with_capacity(self.streams.len());
        for stream in &self.streams {
            let mut z = stream.hidden.forward(g, p, h)?;
            let pre = z;
            if let Some(bank) = self.dendrites {
                let d = g.param(p, bank);
                z = g.modulate(z, d, context.values())?;
            }
            let mut s_stepped = stepped;
            let mut s = self.activate(g, z, &mut s_stepped, opts)?;
            if spec.spiking {
                s = g.mean_time(s, steps)?;
            }
            let out = stream.head.forward(g, p, s)?;
            outs.push(out);
            streams.push((pre, out));
        }
        let q = if spec.dueling {
            g.dueling(outs[0], outs[1])?
        } else {
            outs[0]
        };
        Ok(Forward { q, bn_nodes, streams })
    }

    fn activate(
        &self,
        g: &mut Graph,
        x: NodeId,
        stepped: &mut bool,
        opts: ForwardOptions,
    ) -> Result<NodeId> {
        if !self.spec.spiking {
            return Ok(g.relu(x));
        }
        let out = g.if_neurons(
            x,
            self.spec.t_sim,
            !*stepped,
            self.spec.threshold,
            self.spec.surrogate,
            opts.relaxed,
        )?;
        *stepped = true;
        Ok(out)
    }

    /// Folds the batch statistics of a train-mode pass into the running estimates.
    pub fn absorb_batch_stats(&mut self, g: &Graph, fwd: &Forward) {
        for (r, node) in self.running.iter_mut().zip(&fwd.bn_nodes) {
            if let Some(stats) = g.batch_stats(*node) {
                r.update(&stats.mean, &stats.var, BN_MOMENTUM);
            }
        }
    }

    /// Inference-mode Q-values for a batch, shape `[batch, actions]`.
    pub fn q_batch(&self, observations: &Tensor, context: &ContextSignal) -> Result<Tensor> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, observations, context, ForwardOptions::INFERENCE)?;
        Ok(g.value(fwd.q).clone())
    }

    /// Inference-mode Q-values of one observation.
    pub fn q_forward(&self, observation: &Tensor, context: &ContextSignal) -> Result<Vec<Float>> {
        Ok(self.q_batch(observation, context)?.into_data())
    }

    /// Makes `self` an exact copy of `other` (parameters and running estimates).
    pub fn copy_from(&mut self, other: &QNetwork) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::StructureMismatch("architectures differ".into()));
        }
        self.params.copy_from(&other.params)?;
        self.running.clone_from(&other.running);
        Ok(())
    }
}
