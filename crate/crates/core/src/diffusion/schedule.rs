use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-step noise variances are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    /// Linear from `start` to `end`, taken literally for any step count.
    Linear { start: f64, end: f64 },
    /// Linear with endpoints given for a 1000-step process and rescaled by
    /// `1000 / K`, so short processes still end near pure noise.
    ScaledLinear { start: f64, end: f64 },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::ScaledLinear {
            start: 1e-4,
            end: 0.02,
        }
    }
}

impl BetaSchedule {
    pub fn betas(&self, num_steps: usize) -> Vec<f64> {
        let (start, end) = match *self {
            BetaSchedule::Linear { start, end } => (start, end),
            BetaSchedule::ScaledLinear { start, end } => {
                let s = 1000.0 / num_steps as f64;
                (start * s, end * s)
            }
        };
        if num_steps == 1 {
            return vec![start];
        }
        (0..num_steps)
            .map(|i| start + (end - start) * i as f64 / (num_steps - 1) as f64)
            .collect()
    }
}

/// DDPM variance schedule over `K` steps.
///
/// Step indices are 1-based: `alpha_bar(k)` is the signal retention after `k`
/// noising steps, with `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    betas: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for NoiseSchedule {
    type Error = Error;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        NoiseSchedule::from_betas(r.betas)
    }
}

impl From<NoiseSchedule> for ScheduleRepr {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleRepr { betas: s.betas }
    }
}

impl NoiseSchedule {
    pub const DEFAULT_STEPS: usize = 100;

    pub fn new(num_steps: usize, kind: BetaSchedule) -> Result<Self> {
        Self::from_betas(kind.betas(num_steps))
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidConfig(
                "schedule needs at least one step".into(),
            ));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidConfig(format!("beta {b} outside (0, 1)")));
        }
        let alphas_bar = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas_bar })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alphas_bar[k - 1]
        }
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.num_steps() {
            return Err(Error::StepOutOfRange {
                k,
                max: self.num_steps(),
            });
        }
        Ok(())
    }

    /// Evenly strided subsequence `t_1 < ... < t_S = K` used for DDIM sampling.
    pub fn inference_timesteps(&self, substeps: usize) -> Result<Vec<usize>> {
        let k = self.num_steps();
        if substeps == 0 || substeps > k {
            return Err(Error::InvalidConfig(format!(
                "inference substeps {substeps} must lie in 1..={k}"
            )));
        }
        Ok((1..=substeps)
            .map(|i| ((i * k) as f64 / substeps as f64).round() as usize)
            .collect())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(Self::DEFAULT_STEPS, BetaSchedule::default()).expect("default schedule is valid")
    }
}
