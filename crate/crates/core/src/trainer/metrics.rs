use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Float;

/// One completed episode as written to the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Global frame count at the terminal step.
    pub frame: u64,
    pub env: String,
    #[serde(skip)]
    pub env_index: usize,
    /// Per-environment episode index.
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: Float,
    pub loss_mean: Option<Float>,
    pub epsilon: Float,
    pub delta_theta: Option<Float>,
    pub switched: bool,
}

#[derive(Serialize)]
struct DecisionRow {
    global_frame: u64,
    env_index: usize,
    episode_return: Float,
    delta_theta: Option<Float>,
    switched: bool,
}

pub fn write_metrics(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(["frame", "env", "episode", "return", "loss_mean", "epsilon", "delta_theta", "switched"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_decision_log(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(["global_frame", "env_index", "episode_return", "delta_theta", "switched"])?;
    }
    for r in records {
        w.serialize(DecisionRow {
            global_frame: r.frame,
            env_index: r.env_index,
            episode_return: r.episode_return,
            delta_theta: r.delta_theta,
            switched: r.switched,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
