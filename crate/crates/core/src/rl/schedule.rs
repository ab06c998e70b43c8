use serde::{Deserialize, Serialize};

use crate::tensor::Float;

/// Linear exploration decay over a frame budget, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: Float,
    pub end: Float,
    pub decay_frames: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.1,
            decay_frames: 1_000_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, frame: u64) -> Float {
        if self.decay_frames == 0 || frame >= self.decay_frames {
            return self.end;
        }
        let f = frame as Float / self.decay_frames as Float;
        self.start * (1.0 - f) + self.end * f
    }
}
