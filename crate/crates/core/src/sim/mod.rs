//! Kinematic desk-scale worlds: pushing, pick-and-place and tilting.

mod expert;
mod sweep;

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use expert::{expert_action, expert_chunk, layout_for};
pub use sweep::{sweep_configs, ConfigOutcome, SweepReport};

use crate::diffusion::{dataset_stats, Demonstration, NoiseSchedule, PointMassPredictor};
use crate::error::{Error, Result};
use crate::format::{check_format_version, FORMAT_VERSION};
use crate::geometry::{ManipulatorConfig, RobotState};
use crate::pipeline::{
    execute_rotational_adaptation_within, generate_trajectory, integrate, PolicyParts,
    PolicySession, TiltWorld, TrajectoryRecord, TILT_TOLERANCE,
};
use crate::projection::{ActionLayout, NormStats};

pub const CONTROL_HZ: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Push,
    PickPlace,
    PourTilt,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Push => "push",
            TaskKind::PickPlace => "pick_place",
            TaskKind::PourTilt => "pour_tilt",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "push" => Ok(TaskKind::Push),
            "pick_place" => Ok(TaskKind::PickPlace),
            "pour_tilt" | "pour" => Ok(TaskKind::PourTilt),
            _ => Err(Error::InvalidConfig(format!("unknown task {s:?}"))),
        }
    }
}

/// When a raised placement surface is folded into the height offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformShift {
    #[default]
    EpisodeWide,
    /// Only while the object is held.
    PlaceOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub kind: TaskKind,
    pub table_height: f64,
    /// Platform height the demonstrations used.
    pub base_platform_height: f64,
    pub platform_height: f64,
    pub platform_x: f64,
    pub platform_half_width: f64,
    pub object_x: f64,
    pub object_width: f64,
    pub object_height: f64,
    /// TCP height above the table at which the held object touches it.
    pub push_height: f64,
    pub push_distance: f64,
    pub target_tilt: f64,
    /// Tilt-equivalent reach tolerance for the tilting task, meters.
    pub reach_tolerance: f64,
    pub max_steps: usize,
    /// Scales every random perturbation; 0 makes the world deterministic.
    pub noise_level: f64,
    pub platform_shift: PlatformShift,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::for_task(TaskKind::Push)
    }
}

impl WorldConfig {
    pub fn for_task(kind: TaskKind) -> Self {
        Self {
            kind,
            table_height: 0.0,
            base_platform_height: 0.09,
            platform_height: 0.09,
            platform_x: 0.5,
            platform_half_width: 0.05,
            object_x: 0.3,
            object_width: 0.05,
            object_height: 0.04,
            push_height: 0.02,
            push_distance: 0.15,
            target_tilt: PI / 6.0,
            reach_tolerance: 1e-3,
            max_steps: match kind {
                TaskKind::Push => 24,
                TaskKind::PickPlace => 40,
                TaskKind::PourTilt => 30,
            },
            noise_level: 1.0,
            platform_shift: PlatformShift::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("table_height", self.table_height),
            ("platform_height", self.platform_height),
            ("base_platform_height", self.base_platform_height),
            ("noise_level", self.noise_level),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        let pos = [
            ("object_width", self.object_width),
            ("object_height", self.object_height),
            ("push_distance", self.push_distance),
            ("platform_half_width", self.platform_half_width),
            ("reach_tolerance", self.reach_tolerance),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if !(self.target_tilt.abs() < PI / 2.0) {
            return Err(Error::InvalidConfig(
                "target_tilt must lie in (-pi/2, pi/2)".into(),
            ));
        }
        Ok(())
    }

    /// Height offset that treats the platform change as a tool shift.
    pub fn platform_delta(&self) -> f64 {
        self.base_platform_height - self.platform_height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    None,
    LiftDuringPush,
    FloorViolation,
    MissedGrasp,
    DriftExceeded,
    Aborted,
}

impl FailureMode {
    pub const ALL: [FailureMode; 6] = [
        FailureMode::None,
        FailureMode::LiftDuringPush,
        FailureMode::FloorViolation,
        FailureMode::MissedGrasp,
        FailureMode::DriftExceeded,
        FailureMode::Aborted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailureMode::None => "none",
            FailureMode::LiftDuringPush => "lift_during_push",
            FailureMode::FloorViolation => "floor_violation",
            FailureMode::MissedGrasp => "missed_grasp",
            FailureMode::DriftExceeded => "drift_exceeded",
            FailureMode::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub success: bool,
    pub failure_mode: FailureMode,
    pub steps: usize,
    /// Task metric: push displacement, placement error, or reach error (m).
    pub metric: f64,
    /// Executed poses with their correction records.
    pub trace: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    /// Bottom-centre position.
    pub position: [f64; 3],
    pub attached: bool,
}

/// One episode's environment.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub active_config: ManipulatorConfig,
    pub seed: u64,
    /// Stop as soon as the task succeeds (off while recording demonstrations).
    pub stop_on_success: bool,
    rng: ChaCha8Rng,
    state: RobotState,
    object: ObjectState,
    step: usize,
    start_x: f64,
    failure: Option<FailureMode>,
    succeeded: bool,
}

impl World {
    pub fn new(config: WorldConfig, active_config: ManipulatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        active_config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nl = config.noise_level;
        let mut n = |s: f64| s * nl * rng.sample::<f64, _>(StandardNormal);
        let zb = active_config.ee_base_height;
        let g = &active_config.gripper;
        let (state, object) = match config.kind {
            TaskKind::Push => {
                let h0 = (0.05 + n(0.015)).clamp(0.03, 0.08);
                let s =
                    RobotState::new([0.0, n(0.005), zb + h0], [n(0.02), 0.0, 0.0], g.grasp_width);
                let o = ObjectState {
                    position: [0.0, s.position[1], (h0 - config.push_height).max(0.0)],
                    attached: true,
                };
                (s, o)
            }
            TaskKind::PickPlace => {
                let h0 = 0.12 + n(0.01);
                let s = RobotState::new(
                    [config.object_x - 0.1 + n(0.02), n(0.005), zb + h0],
                    [0.0; 3],
                    g.max_width,
                );
                let o = ObjectState {
                    position: [config.object_x, 0.0, 0.0],
                    attached: false,
                };
                (s, o)
            }
            TaskKind::PourTilt => (
                RobotState::new([0.4, 0.0, zb + 0.15], [0.0; 3], g.grasp_width),
                ObjectState {
                    position: [0.4, 0.0, 0.15],
                    attached: true,
                },
            ),
        };
        Ok(Self {
            start_x: state.position[0],
            config,
            active_config,
            seed,
            stop_on_success: true,
            rng,
            state,
            object,
            step: 0,
            failure: None,
            succeeded: false,
        })
    }

    pub fn state(&self) -> RobotState {
        self.state
    }

    pub fn object(&self) -> ObjectState {
        self.object
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// TCP height above the table.
    pub fn tcp_height(&self) -> f64 {
        self.state.position[2] - self.active_config.ee_base_height
    }

    pub fn holding(&self) -> bool {
        self.object.attached && self.config.kind == TaskKind::PickPlace
    }

    pub fn failure(&self) -> Option<FailureMode> {
        self.failure
    }

    pub fn succeeded(&self) -> bool {
        self.succeeded
    }

    pub fn is_done(&self) -> bool {
        self.failure.is_some()
            || (self.succeeded && self.stop_on_success)
            || self.step >= self.config.max_steps
    }

    /// Standard-normal draw scaled by `sigma * noise_level`.
    pub fn jitter(&mut self, sigma: f64) -> f64 {
        sigma * self.config.noise_level * self.rng.sample::<f64, _>(StandardNormal)
    }

    fn fail(&mut self, mode: FailureMode) {
        if self.failure.is_none() {
            self.failure = Some(mode);
        }
    }

    fn surface_under(&self, x: f64) -> f64 {
        if (x - self.config.platform_x).abs() < self.config.platform_half_width {
            self.config.platform_height
        } else {
            0.0
        }
    }

    /// Moves the robot to `cmd` (novel frame) and advances the world one tick.
    pub fn apply(&mut self, cmd: RobotState) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        if cmd
            .position
            .iter()
            .chain(&cmd.rotation)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("commanded pose"));
        }
        self.step += 1;
        let g = self.active_config.gripper.clone();
        let prev_width = self.state.gripper_width;
        self.state.position = cmd.position;
        self.state.rotation = cmd.rotation;
        let h = self.tcp_height();
        if h < 0.0 {
            self.fail(FailureMode::FloorViolation);
        }
        match self.config.kind {
            TaskKind::Push => {
                let bottom = (h - self.config.push_height).max(0.0);
                self.object.position = [cmd.position[0], cmd.position[1], bottom];
                let disp = cmd.position[0] - self.start_x;
                if disp > 0.02 && bottom > 0.01 {
                    self.fail(FailureMode::LiftDuringPush);
                }
                if disp >= self.config.push_distance && self.failure.is_none() {
                    self.succeeded = true;
                }
            }
            TaskKind::PickPlace => {
                let target = g.clamp_width(cmd.gripper_width);
                let half = 0.5 * self.config.object_height;
                if self.object.attached {
                    if target > prev_width + 0.005 {
                        self.object.attached = false;
                        let x = cmd.position[0];
                        self.object.position = [x, cmd.position[1], self.surface_under(x)];
                        self.state.gripper_width = target;
                        let on_platform = self.object.position[2] == self.config.platform_height
                            && (x - self.config.platform_x).abs() <= 0.02;
                        if on_platform {
                            self.succeeded = true;
                        } else {
                            self.fail(FailureMode::DriftExceeded);
                        }
                    } else {
                        let bottom = h - half;
                        self.object.position = [cmd.position[0], cmd.position[1], bottom];
                        if bottom < self.surface_under(cmd.position[0]) - 1e-9 {
                            self.fail(FailureMode::FloorViolation);
                        }
                    }
                } else if target < prev_width - 0.005 {
                    let o = self.object.position;
                    let ok = (cmd.position[0] - o[0]).abs() <= 0.01
                        && (h - (o[2] + half)).abs() <= 0.01
                        && (target - self.config.object_width).abs() <= 0.01;
                    if ok && !self.succeeded {
                        self.object.attached = true;
                        self.state.gripper_width = self.config.object_width.max(g.min_width);
                    } else {
                        self.state.gripper_width = target;
                        if !self.succeeded {
                            self.fail(FailureMode::MissedGrasp);
                        }
                    }
                } else {
                    self.state.gripper_width = target;
                    if (cmd.position[0] - self.config.platform_x).abs()
                        < self.config.platform_half_width
                        && h < self.config.platform_height
                    {
                        self.fail(FailureMode::FloorViolation);
                    }
                }
            }
            TaskKind::PourTilt => {}
        }
        if self.step >= self.config.max_steps && !self.succeeded {
            self.fail(FailureMode::DriftExceeded);
        }
        Ok(())
    }

    /// Lateral TCP reach `d·sin θ` of the active arm.
    pub fn reach(&self) -> f64 {
        self.active_config.tcp_arm_length * self.state.rotation[0].sin()
    }

    pub fn metric(&self, base: &ManipulatorConfig) -> f64 {
        match self.config.kind {
            TaskKind::Push => self.object.position[0] - self.start_x,
            TaskKind::PickPlace => (self.object.position[0] - self.config.platform_x).abs(),
            TaskKind::PourTilt => {
                (self.reach() - base.tcp_arm_length * self.config.target_tilt.sin()).abs()
            }
        }
    }
}

impl TiltWorld for World {
    fn robot_state(&self) -> RobotState {
        self.state
    }

    fn apply_tilt(&mut self, delta: f64) -> Result<()> {
        let mut s = self.state;
        s.rotation[0] += delta;
        self.apply(s)
    }

    fn base_target(&self) -> f64 {
        self.config.target_tilt
    }
}

fn record(world: &World, corrected: bool, nu: [f64; 6]) -> TrajectoryRecord {
    let s = world.state();
    TrajectoryRecord {
        t: world.steps(),
        position: s.position,
        rotation: s.rotation,
        gripper_width: s.gripper_width,
        corrected,
        nu: nu.to_vec(),
    }
}

/// Closed-loop rollout; executes the first `horizon / 2` waypoints of each
/// chunk before replanning.
pub fn run_episode(world: &mut World, session: &PolicySession, seed: u64) -> EpisodeResult {
    run_episode_switching(world, session, session, seed)
}

/// As [`run_episode`], planning with `holding` while the object is held.
pub fn run_episode_switching(
    world: &mut World,
    free: &PolicySession,
    holding: &PolicySession,
    seed: u64,
) -> EpisodeResult {
    let mut trace = vec![record(world, false, [0.0; 6])];
    let mut aborted = false;
    if world.config.kind == TaskKind::PourTilt {
        // Stop only once the reach is inside the success band.
        let tol = (0.5 * world.config.reach_tolerance / world.active_config.tcp_arm_length)
            .min(TILT_TOLERANCE);
        let max_steps = world.config.max_steps;
        match execute_rotational_adaptation_within(world, free, max_steps, tol, seed) {
            Ok(rt) => {
                for s in &rt.steps {
                    let mut r = trace[0].clone();
                    r.t = s.step + 1;
                    r.rotation[0] = s.theta_new + s.delta_new;
                    trace.push(r);
                }
            }
            Err(Error::NonConvergence { .. }) => {}
            Err(e) => {
                log::debug!("episode {seed} aborted: {e}");
                aborted = true;
            }
        }
        let metric = world.metric(&free.base);
        let success = !aborted && metric < world.config.reach_tolerance;
        let failure_mode = match (success, aborted) {
            (true, _) => FailureMode::None,
            (false, true) => FailureMode::Aborted,
            (false, false) => FailureMode::DriftExceeded,
        };
        return EpisodeResult {
            seed,
            success,
            failure_mode,
            steps: world.steps(),
            metric,
            trace,
        };
    }

    let mut history = vec![world.state()];
    let mut plan = 0u64;
    while !world.is_done() {
        let session = if world.holding() { holding } else { free };
        let start = history.len().saturating_sub(session.history_len.max(1));
        let traj = match generate_trajectory(&history[start..], session, seed_mix(seed, plan)) {
            Ok(t) => t,
            Err(e) => {
                log::debug!("episode {seed} aborted: {e}");
                aborted = true;
                break;
            }
        };
        plan += 1;
        let exec = (session.horizon() / 2).max(1);
        for j in 0..exec {
            if world.is_done() {
                break;
            }
            if let Err(e) = world.apply(traj.waypoints[j]) {
                log::debug!("episode {seed} aborted: {e}");
                aborted = true;
                break;
            }
            history.push(world.state());
            trace.push(record(world, traj.corrected[j], traj.nu[j]));
        }
        if aborted {
            break;
        }
    }
    let success = !aborted && world.succeeded() && world.failure().is_none();
    let failure_mode = if aborted {
        FailureMode::Aborted
    } else if success {
        FailureMode::None
    } else {
        world.failure().unwrap_or(FailureMode::DriftExceeded)
    };
    EpisodeResult {
        seed,
        success,
        failure_mode,
        steps: world.steps(),
        metric: world.metric(&free.base),
        trace,
    }
}

pub(crate) fn seed_mix(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoDataset {
    pub format_version: String,
    pub task: TaskKind,
    pub layout: ActionLayout,
    pub world: WorldConfig,
    pub base_config: ManipulatorConfig,
    pub control_hz: f64,
    pub noise_level: f64,
    pub seed: u64,
    pub demos: Vec<Demonstration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSidecar {
    pub format_version: String,
    pub obs_stats: NormStats,
    pub action_stats: NormStats,
}

impl DemoDataset {
    pub fn stats(&self, min_half_range: f64) -> Result<StatsSidecar> {
        let (obs_stats, action_stats) =
            dataset_stats(&self.demos, self.layout.dim(), min_half_range)?;
        Ok(StatsSidecar {
            format_version: FORMAT_VERSION.into(),
            obs_stats,
            action_stats,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let version = v
            .get("format_version")
            .and_then(|f| f.as_str())
            .ok_or_else(|| Error::Format("dataset lacks format_version".into()))?;
        check_format_version(version)?;
        let ds: Self = serde_json::from_value(v)?;
        if ds.demos.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

fn action_noise(world: &mut World, a: &mut [f64]) {
    match world.config.kind {
        TaskKind::Push => {
            a[1] += world.jitter(0.001);
            a[2] += world.jitter(0.002);
            a[3] += world.jitter(0.005);
        }
        TaskKind::PickPlace => {
            a[0] += world.jitter(0.002);
            a[1] += world.jitter(0.001);
            a[2] += world.jitter(0.002);
        }
        TaskKind::PourTilt => a[3] += world.jitter(0.005),
    }
}

/// Records `n` scripted demonstrations on the base configuration.
///
/// Labels are the expert's clean actions; the executed actions carry noise so
/// the data covers recoveries from small deviations.
pub fn generate_demos(
    config: &WorldConfig,
    base: &ManipulatorConfig,
    n: usize,
    noise_level: f64,
    seed: u64,
) -> Result<DemoDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "number of demonstrations must be >= 1".into(),
        ));
    }
    let mut cfg = config.clone();
    cfg.noise_level = noise_level;
    cfg.platform_height = cfg.base_platform_height;
    cfg.validate()?;
    let layout = layout_for(cfg.kind);
    let mut demos = Vec::with_capacity(n);
    for i in 0..n {
        let mut world = World::new(cfg.clone(), base.clone(), seed_mix(seed, i as u64))?;
        world.stop_on_success = false;
        let mut states = vec![world.state()];
        let mut actions = Vec::new();
        while !world.is_done() {
            let s = world.state();
            let label = expert_action(&cfg, base, &s);
            let mut executed = label.clone();
            action_noise(&mut world, &mut executed);
            let row =
                ndarray::Array2::from_shape_vec((1, executed.len()), executed).expect("one row");
            let next = integrate(&s, &row, &layout)[0];
            world.apply(next)?;
            actions.push(label);
            states.push(world.state());
        }
        if let Some(f) = world.failure().filter(|f| *f != FailureMode::DriftExceeded) {
            log::warn!("demo {i} ended with {}", f.name());
        }
        demos.push(Demonstration { states, actions });
    }
    Ok(DemoDataset {
        format_version: FORMAT_VERSION.into(),
        task: cfg.kind,
        layout,
        world: cfg,
        base_config: base.clone(),
        control_hz: CONTROL_HZ,
        noise_level,
        seed,
        demos,
    })
}

/// A policy that replays the scripted expert exactly, for running the
/// pipeline without a trained network.
pub fn expert_parts(
    dataset: &DemoDataset,
    schedule: &NoiseSchedule,
    horizon: usize,
    min_half_range: f64,
) -> Result<PolicyParts> {
    let stats = dataset.stats(min_half_range)?;
    let cfg = dataset.world.clone();
    let base = dataset.base_config.clone();
    let obs_stats = stats.obs_stats.clone();
    let action_stats = stats.action_stats.clone();
    let target = move |obs: &crate::diffusion::Observation| {
        let n = RobotState::DIM;
        let f = &obs.features;
        let s = RobotState::from_slice(&obs_stats.denormalize(&f[f.len() - n..]));
        let chunk = expert_chunk(&cfg, &base, &s, horizon);
        action_stats
            .normalize_rows(&chunk)
            .expect("stats match layout")
    };
    Ok(PolicyParts {
        predictor: Arc::new(PointMassPredictor::new(schedule, target)),
        schedule: schedule.clone(),
        obs_stats: stats.obs_stats,
        action_stats: stats.action_stats,
        layout: dataset.layout.clone(),
        horizon,
        history_len: 1,
        base: dataset.base_config.clone(),
    })
}
