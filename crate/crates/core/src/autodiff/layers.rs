//! Parameterized layer constructors over a [`ParamStore`].

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: Float) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Kaiming-uniform weight bound for a given fan-in.
fn kaiming_bound(fan_in: usize) -> Float {
    (6.0 / fan_in as Float).sqrt()
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[out_features, in_features], kaiming_bound(in_features)),
        );
        let bias = store.add(
            format!("{name}.bias"),
            uniform(rng, &[out_features], 1.0 / (in_features as Float).sqrt()),
        );
        Self {
            name: name.to_string(),
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(&self.name, x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "{name}: kernel and stride must be positive"
            )));
        }
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform(
                rng,
                &[out_channels, in_channels, kernel, kernel],
                kaiming_bound(fan_in),
            ),
        );
        let bias = store.add(
            format!("{name}.bias"),
            uniform(rng, &[out_channels], 1.0 / (fan_in as Float).sqrt()),
        );
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
        })
    }

    /// Spatial output size of an unpadded convolution.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        if self.kernel > input {
            return Err(Error::shape(
                &self.name,
                format!("kernel {} larger than input {input}", self.kernel),
            ));
        }
        Ok((input - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(&self.name, x, w, b, self.stride)
    }
}

/// Non-trainable running estimates of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<Float>,
    pub var: Vec<Float>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn update(&mut self, batch_mean: &[Float], batch_var: &[Float], momentum: Float) {
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

pub const BN_MOMENTUM: Float = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub scale: ParamId,
    pub shift: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Tensor::full(&[channels], 1.0));
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(&[channels]));
        Self {
            name: name.to_string(),
            scale,
            shift,
            channels,
        }
    }

    /// Train mode when `running` is `None`, inference mode otherwise.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        running: Option<&RunningStats>,
    ) -> Result<NodeId> {
        let s = g.param(store, self.scale);
        let b = g.param(store, self.shift);
        g.batch_norm(
            &self.name,
            x,
            s,
            b,
            running.map(|r| (r.mean.as_slice(), r.var.as_slice())),
        )
    }
}
