//! Minimal reverse-mode automatic differentiation and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{BatchStats, Gradients, Graph, NodeId, BN_EPS};
pub use kernels::ConvGeom;
pub use layers::{BatchNorm, Conv2d, Linear, RunningStats, BN_MOMENTUM};
pub use params::{ParamId, ParamStore};
