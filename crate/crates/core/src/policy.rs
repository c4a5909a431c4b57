//! Trained policy bundle and its on-disk model file.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    train_mlp_predictor, BetaSchedule, MlpPredictor, NoiseSchedule, TrainConfig, TrainReport,
};
use crate::error::{Error, Result};
use crate::format::{check_format_version, FORMAT_VERSION};
use crate::geometry::ManipulatorConfig;
use crate::pipeline::PolicyParts;
use crate::projection::{ActionLayout, NormStats};
use crate::sim::{DemoDataset, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub format_version: String,
    pub task: TaskKind,
    pub layout: ActionLayout,
    pub horizon: usize,
    pub history_len: usize,
    pub schedule: NoiseSchedule,
    pub predictor: MlpPredictor,
    pub obs_stats: NormStats,
    pub action_stats: NormStats,
    pub base_config: ManipulatorConfig,
    pub train_config: TrainConfig,
    pub report: TrainReport,
}

/// Trains a noise predictor on a demonstration file.
pub fn train_policy(
    dataset: &DemoDataset,
    steps: usize,
    beta: BetaSchedule,
    config: &TrainConfig,
) -> Result<PolicyModel> {
    let schedule = NoiseSchedule::new(steps, beta)?;
    let trained = train_mlp_predictor(&dataset.demos, dataset.layout.axes(), &schedule, config)?;
    Ok(PolicyModel {
        format_version: FORMAT_VERSION.into(),
        task: dataset.task,
        layout: dataset.layout.clone(),
        horizon: config.horizon,
        history_len: config.history_len,
        schedule,
        predictor: trained.predictor,
        obs_stats: trained.obs_stats,
        action_stats: trained.action_stats,
        base_config: dataset.base_config.clone(),
        train_config: config.clone(),
        report: trained.report,
    })
}

impl PolicyModel {
    pub fn parts(&self) -> PolicyParts {
        PolicyParts {
            predictor: Arc::new(self.predictor.clone()),
            schedule: self.schedule.clone(),
            obs_stats: self.obs_stats.clone(),
            action_stats: self.action_stats.clone(),
            layout: self.layout.clone(),
            horizon: self.horizon,
            history_len: self.history_len,
            base: self.base_config.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_format_version(&self.format_version)?;
        let p = &self.predictor;
        let d = self.layout.dim();
        if p.horizon != self.horizon || p.action_dim != d || self.action_stats.dim() != d {
            return Err(Error::ShapeMismatch {
                expected: (self.horizon, d),
                found: (p.horizon, p.action_dim),
            });
        }
        if p.net.input_dim() != self.horizon * d + p.obs_dim + p.step_embedding_dim
            || p.net.output_dim() != self.horizon * d
        {
            return Err(Error::Format(
                "network shape disagrees with model header".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let version = v
            .get("format_version")
            .and_then(|f| f.as_str())
            .ok_or_else(|| Error::Format("model lacks format_version".into()))?;
        check_format_version(version)?;
        let model: Self = serde_json::from_value(v)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_catalog;
    use crate::sim::{generate_demos, WorldConfig};

    #[test]
    fn save_load_round_trip() {
        let ds = generate_demos(&WorldConfig::default(), &default_catalog()[0], 2, 1.0, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let m = train_policy(&ds, 100, BetaSchedule::default(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(PolicyModel::load(&path).unwrap(), m);

        let mut v: serde_json::Value = serde_json::to_value(&m).unwrap();
        v["format_version"] = "9.0".into();
        assert!(PolicyModel::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::to_value(&m).unwrap();
        v["horizon"] = 4.into();
        assert!(PolicyModel::from_json(&v.to_string()).is_err());
    }
}
