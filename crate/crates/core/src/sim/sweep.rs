use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    run_episode_switching, seed_mix, EpisodeResult, FailureMode, PlatformShift, World, WorldConfig,
};
use crate::error::{Error, Result};
use crate::geometry::ManipulatorConfig;
use crate::pipeline::{Mode, PolicyParts, PolicySession, SessionOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub config_id: String,
    pub gripper_id: String,
    pub mode: Mode,
    pub episodes: usize,
    pub successes: usize,
    pub failures: BTreeMap<FailureMode, usize>,
}

impl ConfigOutcome {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }

    pub fn count(&self, mode: FailureMode) -> usize {
        self.failures.get(&mode).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub outcomes: Vec<ConfigOutcome>,
    #[serde(skip)]
    pub episodes: Vec<(String, Mode, EpisodeResult)>,
}

impl SweepReport {
    pub fn get(&self, gripper_id: &str, mode: Mode) -> Option<&ConfigOutcome> {
        self.outcomes
            .iter()
            .find(|o| (o.gripper_id == gripper_id || o.config_id == gripper_id) && o.mode == mode)
    }

    fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for o in &self.outcomes {
            if !cols.contains(&o.gripper_id) {
                cols.push(o.gripper_id.clone());
            }
        }
        cols
    }

    fn modes(&self) -> Vec<Mode> {
        let mut modes = Vec::new();
        for o in &self.outcomes {
            if !modes.contains(&o.mode) {
                modes.push(o.mode);
            }
        }
        modes
    }

    /// Success rates with configurations as columns and methods as rows.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let cols = self.columns();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["method".to_string()];
        header.extend(cols.iter().cloned());
        w.write_record(&header)?;
        for mode in self.modes() {
            let mut row = vec![mode.name().to_string()];
            for c in &cols {
                let rate = self
                    .get(c, mode)
                    .map_or(f64::NAN, ConfigOutcome::success_rate);
                row.push(format!("{rate:.4}"));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per (configuration, method) with raw counts per failure mode.
    pub fn write_counts_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["config", "method", "episodes", "successes"];
        header.extend(FailureMode::ALL[1..].iter().map(|f| f.name()));
        w.write_record(&header)?;
        for o in &self.outcomes {
            let mut row = vec![
                o.config_id.clone(),
                o.mode.name().to_string(),
                o.episodes.to_string(),
                o.successes.to_string(),
            ];
            row.extend(
                FailureMode::ALL[1..]
                    .iter()
                    .map(|f| o.count(*f).to_string()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `episodes` seeded episodes per configuration and mode.
///
/// Episode `e` uses the same seed for every configuration and mode, so rows
/// are paired comparisons.
pub fn sweep_configs(
    catalog: &[ManipulatorConfig],
    parts: &PolicyParts,
    world: &WorldConfig,
    modes: &[Mode],
    episodes: usize,
    seed: u64,
    opts: &SessionOptions,
) -> Result<SweepReport> {
    if catalog.is_empty() {
        return Err(Error::InvalidConfig("catalog is empty".into()));
    }
    world.validate()?;
    let mut outcomes = Vec::new();
    let mut all = Vec::new();
    for cfg in catalog {
        for &mode in modes {
            let shift = world.platform_delta();
            let shifted = SessionOptions {
                extra_delta_d: opts.extra_delta_d + shift,
                ..opts.clone()
            };
            let holding = PolicySession::new(parts, cfg, mode, &shifted)?;
            let free = match world.platform_shift {
                PlatformShift::EpisodeWide => holding.clone(),
                PlatformShift::PlaceOnly => PolicySession::new(parts, cfg, mode, opts)?,
            };
            let results: Vec<EpisodeResult> = (0..episodes)
                .into_par_iter()
                .map(|e| {
                    let s = seed_mix(seed, e as u64);
                    let mut w = World::new(world.clone(), cfg.clone(), s)?;
                    Ok(run_episode_switching(&mut w, &free, &holding, s))
                })
                .collect::<Result<_>>()?;
            let mut failures = BTreeMap::new();
            for r in &results {
                if !r.success {
                    *failures.entry(r.failure_mode).or_insert(0) += 1;
                }
            }
            outcomes.push(ConfigOutcome {
                config_id: cfg.id(),
                gripper_id: cfg.gripper.id.clone(),
                mode,
                episodes,
                successes: results.iter().filter(|r| r.success).count(),
                failures,
            });
            all.extend(results.into_iter().map(|r| (cfg.id(), mode, r)));
        }
    }
    Ok(SweepReport {
        outcomes,
        episodes: all,
    })
}
