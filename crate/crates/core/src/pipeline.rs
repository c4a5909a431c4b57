//! Adapted observation → projected DDIM sampling → executable waypoints.

use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{ActionChunk, DdimSampler, NoisePredictor, NoiseSchedule, Observation};
use crate::error::{Error, Result};
use crate::geometry::{
    adapt_rotation, adapt_state, derive_adaptation, rotational_execution_step, unadapt_state,
    AdaptationParams, ManipulatorConfig, RobotState,
};
use crate::projection::{
    compile_constraints, project_horizon, ActionAxis, ActionLayout, ConstraintSet, CumulativeMode,
    NormStats, DEFAULT_EPS_SAFE, DEFAULT_EPS_TASK,
};

pub const DEFAULT_SUBSTEPS: usize = 16;
pub const DEFAULT_PROJECTION_WINDOW: usize = 5;

/// Whether the adaptation and projection stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WithAp,
    WithoutAp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::WithAp => "with_ap",
            Mode::WithoutAp => "without_ap",
        }
    }
}

/// A trained policy, independent of the robot it will drive.
#[derive(Clone)]
pub struct PolicyParts {
    pub predictor: Arc<dyn NoisePredictor>,
    pub schedule: NoiseSchedule,
    pub obs_stats: NormStats,
    pub action_stats: NormStats,
    pub layout: ActionLayout,
    pub horizon: usize,
    pub history_len: usize,
    /// Configuration the demonstrations were recorded on.
    pub base: ManipulatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub substeps: usize,
    pub projection_window: usize,
    pub eps_safe: f64,
    pub eps_task: f64,
    pub cumulative: CumulativeMode,
    /// Added to the derived height offset, e.g. a raised placement surface
    /// treated as a tool shift.
    pub extra_delta_d: f64,
    /// Clamp on clean-sample estimates during denoising (latent units).
    pub clip_sample: Option<f64>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            substeps: DEFAULT_SUBSTEPS,
            projection_window: DEFAULT_PROJECTION_WINDOW,
            eps_safe: DEFAULT_EPS_SAFE,
            eps_task: DEFAULT_EPS_TASK,
            cumulative: CumulativeMode::default(),
            extra_delta_d: 0.0,
            clip_sample: None,
        }
    }
}

/// Everything needed to run the base policy on one novel configuration.
#[derive(Clone)]
pub struct PolicySession {
    pub predictor: Arc<dyn NoisePredictor>,
    pub sampler: DdimSampler,
    pub obs_stats: NormStats,
    pub action_stats: NormStats,
    pub layout: ActionLayout,
    pub constraints: ConstraintSet,
    pub adaptation: AdaptationParams,
    pub base: ManipulatorConfig,
    pub novel: ManipulatorConfig,
    /// Substep indices `≤` this value are projected; `None` disables projection.
    pub projection_window: Option<usize>,
    pub history_len: usize,
    pub grasp_summary: Option<Vec<f64>>,
    pub mode: Mode,
}

impl PolicySession {
    pub fn new(
        parts: &PolicyParts,
        novel: &ManipulatorConfig,
        mode: Mode,
        opts: &SessionOptions,
    ) -> Result<Self> {
        if opts.projection_window > opts.substeps {
            return Err(Error::InvalidConfig(format!(
                "projection window {} exceeds {} substeps",
                opts.projection_window, opts.substeps
            )));
        }
        if parts.action_stats.dim() != parts.layout.dim() {
            return Err(Error::ShapeMismatch {
                expected: (parts.horizon, parts.layout.dim()),
                found: (parts.horizon, parts.action_stats.dim()),
            });
        }
        let derived = derive_adaptation(&parts.base, novel)?;
        let adaptation = match mode {
            Mode::WithAp => AdaptationParams::new(
                derived.delta_d + opts.extra_delta_d,
                derived.alpha,
                derived.d_ratio,
            )?,
            Mode::WithoutAp => AdaptationParams::IDENTITY,
        };
        let constraints = compile_constraints(
            &parts.base,
            novel,
            opts.eps_safe,
            opts.eps_task,
            parts.horizon,
            &parts.layout,
        )?
        .with_cumulative(opts.cumulative);
        Ok(Self {
            predictor: parts.predictor.clone(),
            sampler: DdimSampler::new(&parts.schedule, opts.substeps)?
                .with_clip_sample(opts.clip_sample),
            obs_stats: parts.obs_stats.clone(),
            action_stats: parts.action_stats.clone(),
            layout: parts.layout.clone(),
            constraints,
            adaptation,
            base: parts.base.clone(),
            novel: novel.clone(),
            projection_window: (mode == Mode::WithAp).then_some(opts.projection_window),
            history_len: parts.history_len,
            grasp_summary: None,
            mode,
        })
    }

    pub fn horizon(&self) -> usize {
        self.constraints.horizon
    }

    /// Novel-frame state → the base frame the policy was trained in.
    pub fn adapt(&self, raw: &RobotState) -> Result<RobotState> {
        adapt_state(
            raw,
            &self.adaptation,
            &self.novel.gripper,
            &self.base.gripper,
        )
    }

    /// Base-frame pose → the novel robot's command.
    pub fn unadapt(&self, s: &RobotState) -> Result<RobotState> {
        let mut out = unadapt_state(s, &self.adaptation, &self.novel.gripper, &self.base.gripper)?;
        out.gripper_width = self.novel.gripper.clamp_width(out.gripper_width);
        Ok(out)
    }
}

/// Adapts and normalizes the recent raw states (oldest first).
pub fn assemble_observation(
    raw_history: &[RobotState],
    session: &PolicySession,
) -> Result<Observation> {
    let adapted = raw_history
        .iter()
        .map(|s| session.adapt(s))
        .collect::<Result<Vec<_>>>()?;
    Observation::encode(
        &adapted,
        session.history_len,
        &session.obs_stats,
        session.grasp_summary.clone(),
    )
}

/// A decoded chunk with its correction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// The state the chunk was generated from, in the base frame.
    pub adapted_start: RobotState,
    /// Final latent chunk.
    pub latent: ActionChunk,
    /// Cartesian actions in the base frame, one row per horizon step.
    pub actions: Array2<f64>,
    /// Integrated base-frame poses after each action.
    pub base_waypoints: Vec<RobotState>,
    /// Poses commanded to the novel robot.
    pub waypoints: Vec<RobotState>,
    /// Rows changed by any projection pass.
    pub corrected: Vec<bool>,
    /// ν summed over all projection passes.
    pub nu: Vec<[f64; 6]>,
}

/// Runs the denoising loop and returns the chunk after every substep,
/// last entry being the final chunk.
pub fn denoise_chain(
    raw_history: &[RobotState],
    session: &PolicySession,
    seed: u64,
) -> Result<Vec<ActionChunk>> {
    let mut chain = Vec::new();
    run(raw_history, session, seed, Some(&mut chain))?;
    Ok(chain)
}

/// Algorithm entry point: one chunk for the current state.
pub fn generate_trajectory(
    raw_history: &[RobotState],
    session: &PolicySession,
    seed: u64,
) -> Result<Trajectory> {
    run(raw_history, session, seed, None)
}

fn run(
    raw_history: &[RobotState],
    session: &PolicySession,
    seed: u64,
    mut chain: Option<&mut Vec<ActionChunk>>,
) -> Result<Trajectory> {
    let obs = assemble_observation(raw_history, session)?;
    let start = obs.robot_state;
    let horizon = session.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = DdimSampler::initial_noise(horizon, session.layout.dim(), &mut rng);

    let mut corrected = vec![false; horizon];
    let mut nu = vec![[0.0; 6]; horizon];
    let latent =
        session
            .sampler
            .sample(initial, &obs, session.predictor.as_ref(), |i, chunk| {
                if session.projection_window.is_some_and(|w| i <= w) {
                    let (projected, corr) = project_horizon(
                        &start,
                        chunk,
                        &session.action_stats,
                        &session.constraints,
                    )?;
                    for (j, step) in corr.steps.iter().enumerate() {
                        if step.is_active() {
                            corrected[j] = true;
                            for (acc, v) in nu[j].iter_mut().zip(step.nu) {
                                *acc += v;
                            }
                        }
                    }
                    *chunk = projected;
                }
                if let Some(c) = chain.as_deref_mut() {
                    c.push(chunk.clone());
                }
                Ok(())
            })?;

    let actions = session.action_stats.denormalize_rows(&latent.latent)?;
    let base_waypoints = integrate(&start, &actions, &session.layout);
    let waypoints = base_waypoints
        .iter()
        .map(|s| session.unadapt(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        adapted_start: start,
        latent,
        actions,
        base_waypoints,
        waypoints,
        corrected,
        nu,
    })
}

/// Accumulates displacement columns from `start`; a gripper column sets the
/// width directly.
pub fn integrate(
    start: &RobotState,
    actions: &Array2<f64>,
    layout: &ActionLayout,
) -> Vec<RobotState> {
    let mut s = *start;
    actions
        .rows()
        .into_iter()
        .map(|row| {
            for (a, v) in layout.axes().iter().zip(row.iter()) {
                match a.cartesian_index() {
                    Some(i @ 0..=2) => s.position[i] += v,
                    Some(i) => s.rotation[i - 3] += v,
                    None => s.gripper_width = *v,
                }
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub position: [f64; 3],
    pub rotation: [f64; 3],
    pub gripper_width: f64,
    pub corrected: bool,
    pub nu: Vec<f64>,
}

impl Trajectory {
    /// One record per horizon step, numbered from `t0`.
    pub fn records(&self, t0: usize) -> Vec<TrajectoryRecord> {
        self.waypoints
            .iter()
            .enumerate()
            .map(|(j, w)| TrajectoryRecord {
                t: t0 + j,
                position: w.position,
                rotation: w.rotation,
                gripper_width: w.gripper_width,
                corrected: self.corrected[j],
                nu: self.nu[j].to_vec(),
            })
            .collect()
    }
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Something that holds a tilt about x and can be commanded to change it.
pub trait TiltWorld {
    /// Current full state of the novel robot.
    fn robot_state(&self) -> RobotState;
    /// Apply an increment to the novel robot's tilt.
    fn apply_tilt(&mut self, delta: f64) -> Result<()>;
    /// Angle the base policy ends at, in the base frame.
    fn base_target(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationStep {
    pub step: usize,
    /// Novel robot angle before the step.
    pub theta_new: f64,
    /// Same angle seen in the base frame.
    pub theta_base: f64,
    pub delta_base: f64,
    pub delta_new: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationTrace {
    /// Target angle for the novel robot.
    pub theta_star: f64,
    pub final_theta: f64,
    pub steps: Vec<RotationStep>,
}

pub const TILT_TOLERANCE: f64 = 0.01;

/// Closed-loop tilt execution: each cycle queries the policy in the base
/// frame and maps the expected base angle back onto the novel arm. Stops
/// within [`TILT_TOLERANCE`] of the mapped target.
pub fn execute_rotational_adaptation<W: TiltWorld>(
    world: &mut W,
    session: &PolicySession,
    max_steps: usize,
    seed: u64,
) -> Result<RotationTrace> {
    execute_rotational_adaptation_within(world, session, max_steps, TILT_TOLERANCE, seed)
}

/// [`execute_rotational_adaptation`] with an explicit stopping tolerance (rad).
pub fn execute_rotational_adaptation_within<W: TiltWorld>(
    world: &mut W,
    session: &PolicySession,
    max_steps: usize,
    tolerance: f64,
    seed: u64,
) -> Result<RotationTrace> {
    let rx = session
        .layout
        .index_of(ActionAxis::Rx)
        .ok_or_else(|| Error::InvalidConfig("policy has no tilt axis".into()))?;
    let d_base = session.base.tcp_arm_length;
    let d_new = match session.mode {
        Mode::WithAp => session.novel.tcp_arm_length,
        Mode::WithoutAp => d_base,
    };
    let theta_star = adapt_rotation(world.base_target(), d_base / d_new)?;
    let mut steps = Vec::new();
    let mut history = vec![world.robot_state()];
    for step in 0..=max_steps {
        let theta_new = world.robot_state().rotation[0];
        if (theta_new - theta_star).abs() < tolerance {
            return Ok(RotationTrace {
                theta_star,
                final_theta: theta_new,
                steps,
            });
        }
        if step == max_steps {
            break;
        }
        let start = history.len().saturating_sub(session.history_len.max(1));
        let traj = generate_trajectory(&history[start..], session, seed.wrapping_add(step as u64))?;
        let mut seen_base = 0.0;
        let delta_base_out = traj.actions[(0, rx)];
        let delta_new = rotational_execution_step(
            theta_new,
            |theta_base| {
                seen_base = theta_base;
                Ok(delta_base_out)
            },
            d_base,
            d_new,
        )?;
        world.apply_tilt(delta_new)?;
        steps.push(RotationStep {
            step,
            theta_new,
            theta_base: seen_base,
            delta_base: delta_base_out,
            delta_new,
        });
        history.push(world.robot_state());
    }
    Err(Error::NonConvergence { steps: max_steps })
}
