//! Manipulator and gripper geometry, and the mappings that re-express a novel
//! configuration's robot state in the base configuration's frame.
//!
//! Translation and gripper width are mapped linearly. Tilt about the x and y
//! axes is mapped so that the lateral TCP offset `d * sin(theta)` is preserved
//! between arms of different length. Rotation about z is passed through.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperConfig {
    pub id: String,
    /// Fully open jaw width.
    pub max_width: f64,
    pub height: f64,
    /// Jaw width while holding the reference object.
    pub grasp_width: f64,
    pub min_width: f64,
}

impl GripperConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_width >= 0.0
            && self.min_width <= self.grasp_width
            && self.grasp_width <= self.max_width
            && self.height > 0.0
            && [
                self.min_width,
                self.grasp_width,
                self.max_width,
                self.height,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "gripper {}: need 0 <= min_width <= grasp_width <= max_width and height > 0",
                self.id
            )))
        }
    }

    pub fn clamp_width(&self, g: f64) -> f64 {
        g.clamp(self.min_width, self.max_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorConfig {
    pub robot_id: String,
    pub gripper: GripperConfig,
    /// Measured EE-base height when the TCP sits at the reference contact.
    pub ee_base_height: f64,
    /// Distance from the EE base to the TCP; the lever arm for tilts.
    pub tcp_arm_length: f64,
}

impl ManipulatorConfig {
    pub fn id(&self) -> String {
        format!("{}/{}", self.robot_id, self.gripper.id)
    }

    pub fn validate(&self) -> Result<()> {
        self.gripper.validate()?;
        if !(self.tcp_arm_length > 0.0) || !self.tcp_arm_length.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{}: tcp_arm_length must be > 0",
                self.id()
            )));
        }
        if !(self.ee_base_height >= 0.0) || !self.ee_base_height.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{}: ee_base_height must be >= 0",
                self.id()
            )));
        }
        Ok(())
    }
}

/// Calibration constants taking a novel configuration onto the base one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    /// `z_base(base) - z_base(novel)`.
    pub delta_d: f64,
    /// Width scale `(w_max - g_grasp)_base / (w_max - g_grasp)_novel`.
    pub alpha: f64,
    /// `d_base / d_novel`.
    pub d_ratio: f64,
}

impl AdaptationParams {
    pub const IDENTITY: Self = Self {
        delta_d: 0.0,
        alpha: 1.0,
        d_ratio: 1.0,
    };

    pub fn new(delta_d: f64, alpha: f64, d_ratio: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(d_ratio > 0.0) || !delta_d.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "adaptation requires alpha > 0 and d_ratio > 0 (got alpha={alpha}, d_ratio={d_ratio})"
            )));
        }
        Ok(Self {
            delta_d,
            alpha,
            d_ratio,
        })
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// End-effector pose (position + per-axis Euler tilt) and gripper width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: [f64; 3],
    pub rotation: [f64; 3],
    pub gripper_width: f64,
}

impl RobotState {
    pub const DIM: usize = 7;

    pub fn new(position: [f64; 3], rotation: [f64; 3], gripper_width: f64) -> Self {
        Self {
            position,
            rotation,
            gripper_width,
        }
    }

    /// `[x, y, z, θx, θy, θz, g]`.
    pub fn to_vec(&self) -> [f64; 7] {
        let [x, y, z] = self.position;
        let [a, b, c] = self.rotation;
        [x, y, z, a, b, c, self.gripper_width]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }

    pub fn validate(&self, gripper: &GripperConfig) -> Result<()> {
        if !self.to_vec().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidState("non-finite component".into()));
        }
        let g = self.gripper_width;
        if g < gripper.min_width || g > gripper.max_width {
            return Err(Error::InvalidState(format!(
                "gripper width {g} outside [{}, {}] of {}",
                gripper.min_width, gripper.max_width, gripper.id
            )));
        }
        if let Some(r) = self.rotation.iter().find(|r| !(**r > -PI && **r <= PI)) {
            return Err(Error::InvalidState(format!(
                "rotation {r} outside (-pi, pi]"
            )));
        }
        Ok(())
    }
}

pub fn derive_adaptation(
    base: &ManipulatorConfig,
    novel: &ManipulatorConfig,
) -> Result<AdaptationParams> {
    base.validate()?;
    novel.validate()?;
    let novel_range = novel.gripper.max_width - novel.gripper.grasp_width;
    if novel_range == 0.0 {
        return Err(Error::ZeroWidthRange);
    }
    let base_range = base.gripper.max_width - base.gripper.grasp_width;
    let alpha = base_range / novel_range;
    if !(alpha > 0.0) {
        // base with zero range would collapse every width onto w_max
        return Err(Error::ZeroWidthRange);
    }
    AdaptationParams::new(
        base.ee_base_height - novel.ee_base_height,
        alpha,
        base.tcp_arm_length / novel.tcp_arm_length,
    )
}

/// `arcsin(d_ratio * sin(theta))`, the tilt a second arm needs to reproduce
/// the lateral TCP offset of the first when `d_ratio = d_first / d_second`.
pub fn adapt_rotation(theta: f64, d_ratio: f64) -> Result<f64> {
    checked_asin(d_ratio * theta.sin())
}

pub(crate) fn checked_asin(arg: f64) -> Result<f64> {
    if !(arg.abs() <= 1.0) {
        return Err(Error::RotationDomain { arg });
    }
    Ok(arg.asin())
}

/// Maps a state measured on the novel configuration into the base frame.
///
/// Tilts go through the inverse ratio (`d_novel / d_base`): the policy must see
/// the base-arm angle that produces the same lateral TCP offset.
pub fn adapt_state(
    state: &RobotState,
    params: &AdaptationParams,
    novel: &GripperConfig,
    base: &GripperConfig,
) -> Result<RobotState> {
    let [x, y, z] = state.position;
    let [tx, ty, tz] = state.rotation;
    let inv = 1.0 / params.d_ratio;
    let rotation = if params.d_ratio == 1.0 {
        [tx, ty, tz]
    } else {
        [adapt_rotation(tx, inv)?, adapt_rotation(ty, inv)?, tz]
    };
    let g = if params.alpha == 1.0 && base.max_width == novel.max_width {
        // skips the cancellation so the identity map is exact
        state.gripper_width
    } else {
        base.max_width - params.alpha * (novel.max_width - state.gripper_width)
    };
    Ok(RobotState::new([x, y, z + params.delta_d], rotation, g))
}

/// Inverse of [`adapt_state`]: a base-frame pose expressed on the novel configuration.
pub fn unadapt_state(
    state: &RobotState,
    params: &AdaptationParams,
    novel: &GripperConfig,
    base: &GripperConfig,
) -> Result<RobotState> {
    let [x, y, z] = state.position;
    let [tx, ty, tz] = state.rotation;
    let rotation = if params.d_ratio == 1.0 {
        [tx, ty, tz]
    } else {
        [
            adapt_rotation(tx, params.d_ratio)?,
            adapt_rotation(ty, params.d_ratio)?,
            tz,
        ]
    };
    Ok(RobotState::new(
        [x, y, z - params.delta_d],
        rotation,
        unadapt_width(state.gripper_width, params, novel, base),
    ))
}

pub fn unadapt_width(
    g_base: f64,
    params: &AdaptationParams,
    novel: &GripperConfig,
    base: &GripperConfig,
) -> f64 {
    if params.alpha == 1.0 && base.max_width == novel.max_width {
        g_base
    } else {
        novel.max_width - (base.max_width - g_base) / params.alpha
    }
}

/// One cycle of the closed-loop tilt procedure.
///
/// 1. Re-express the novel arm's angle in the base frame.
/// 2. Ask the base policy for its increment there.
/// 3. Map the expected base-frame angle back to the novel arm.
///
/// Returns the increment the novel arm should execute.
pub fn rotational_execution_step<F>(
    theta_new_robot: f64,
    policy_delta_fn: F,
    d_base: f64,
    d_new: f64,
) -> Result<f64>
where
    F: FnOnce(f64) -> Result<f64>,
{
    let theta_base = checked_asin(d_new * theta_new_robot.sin() / d_base)?;
    let delta_base = policy_delta_fn(theta_base)?;
    let next_base = theta_base + delta_base;
    if d_base == d_new {
        return Ok(delta_base);
    }
    Ok(checked_asin(d_base * next_base.sin() / d_new)? - theta_new_robot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthUnit {
    #[serde(rename = "m")]
    Meters,
    #[serde(rename = "cm")]
    Centimeters,
}

impl LengthUnit {
    fn to_meters(self) -> f64 {
        match self {
            LengthUnit::Meters => 1.0,
            LengthUnit::Centimeters => 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogRecord {
    units: LengthUnit,
    #[serde(flatten)]
    config: ManipulatorConfig,
}

/// Parses a JSON array of manipulator records, converting lengths to meters.
pub fn parse_catalog(json: &str) -> Result<Vec<ManipulatorConfig>> {
    let records: Vec<CatalogRecord> = serde_json::from_str(json)?;
    records
        .into_iter()
        .map(|r| {
            let s = r.units.to_meters();
            let mut c = r.config;
            c.ee_base_height *= s;
            c.tcp_arm_length *= s;
            let g = &mut c.gripper;
            g.max_width *= s;
            g.height *= s;
            g.grasp_width *= s;
            g.min_width *= s;
            c.validate()?;
            Ok(c)
        })
        .collect()
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Vec<ManipulatorConfig>> {
    parse_catalog(&std::fs::read_to_string(path)?)
}

pub fn catalog_to_json(configs: &[ManipulatorConfig]) -> Result<String> {
    let records: Vec<CatalogRecord> = configs
        .iter()
        .map(|c| CatalogRecord {
            units: LengthUnit::Meters,
            config: c.clone(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

/// The seven parallel grippers of the reference setup (widths and heights in cm).
pub const GRIPPER_CATALOG_JSON: &str = include_str!("../data/grippers.json");

pub fn default_catalog() -> Vec<ManipulatorConfig> {
    parse_catalog(GRIPPER_CATALOG_JSON).expect("bundled catalog is valid")
}

pub fn find_config<'a>(
    catalog: &'a [ManipulatorConfig],
    id: &str,
) -> Result<&'a ManipulatorConfig> {
    catalog
        .iter()
        .find(|c| c.gripper.id == id || c.id() == id)
        .ok_or_else(|| Error::InvalidConfig(format!("no configuration named {id}")))
}
