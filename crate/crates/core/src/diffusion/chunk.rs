use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RobotState;
use crate::projection::NormStats;

/// A horizon of normalized action vectors, one row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub latent: Array2<f64>,
}

impl ActionChunk {
    pub fn new(latent: Array2<f64>) -> Result<Self> {
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("action chunk"));
        }
        Ok(Self { latent })
    }

    pub fn zeros(horizon: usize, action_dim: usize) -> Self {
        Self {
            latent: Array2::zeros((horizon, action_dim)),
        }
    }

    pub fn horizon(&self) -> usize {
        self.latent.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.latent.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.latent.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.latent.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_shape(&self, other: &Array2<f64>) -> Result<()> {
        if self.latent.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.latent.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// Conditioning input for the noise predictor.
///
/// `robot_state` is the most recent (already adapted) state; `features` is the
/// normalized, flattened history the network actually reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub robot_state: RobotState,
    pub grasp_summary: Option<Vec<f64>>,
    pub history_len: usize,
    pub features: Vec<f64>,
}

impl Observation {
    /// Normalizes `history` (oldest first) with `stats`; the last entry is the
    /// current state. Short histories are front-padded with the oldest state.
    pub fn encode(
        history: &[RobotState],
        history_len: usize,
        stats: &NormStats,
        grasp_summary: Option<Vec<f64>>,
    ) -> Result<Self> {
        let current = *history
            .last()
            .ok_or_else(|| Error::InvalidState("empty observation history".into()))?;
        if stats.dim() != RobotState::DIM {
            return Err(Error::ShapeMismatch {
                expected: (1, RobotState::DIM),
                found: (1, stats.dim()),
            });
        }
        let pad = history_len.saturating_sub(history.len());
        let tail = &history[history.len().saturating_sub(history_len)..];
        let mut features = Vec::with_capacity(history_len * RobotState::DIM);
        for s in std::iter::repeat_n(&tail[0], pad).chain(tail.iter()) {
            features.extend(stats.normalize(&s.to_vec()));
        }
        if let Some(g) = &grasp_summary {
            features.extend_from_slice(g);
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Self {
            robot_state: current,
            grasp_summary,
            history_len,
            features,
        })
    }

    /// An observation with no conditioning features, for unconditional predictors.
    pub fn empty() -> Self {
        Self {
            robot_state: RobotState::new([0.0; 3], [0.0; 3], 0.0),
            grasp_summary: None,
            history_len: 0,
            features: Vec::new(),
        }
    }
}
