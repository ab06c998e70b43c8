use super::graph::Gradients;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: Float,
    pub beta1: Float,
    pub beta2: Float,
    pub eps: Float,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", config.lr)));
        }
        let zeros = |s: &ParamStore| -> Vec<Tensor> {
            s.ids().map(|id| Tensor::zeros(s.get(id).shape())).collect()
        };
        Ok(Self {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Fails without touching any parameter if a
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.params().len() != store.len() || self.m.len() != store.len() {
            return Err(Error::StructureMismatch(format!(
                "{} gradients for {} parameters",
                grads.params().len(),
                store.len()
            )));
        }
        for id in store.ids() {
            let g = grads.param(id);
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape(
                    store.name(id),
                    format!("gradient {:?} vs parameter {:?}", g.shape(), store.get(id).shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in store.ids() {
            let g = grads.param(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
