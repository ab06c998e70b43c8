//! Multi-task deep spiking Q-learning with active dendrites, dueling heads
//! and adaptive task switching.

pub mod autodiff;
pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod qnetwork;
pub mod rl;
pub mod spiking;
pub mod switching;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
