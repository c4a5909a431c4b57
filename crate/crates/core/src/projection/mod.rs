//! Minimal-norm correction of generated action chunks against a height floor
//! and a bound on tilt drift, applied cumulatively along the horizon.

mod qp;
mod stats;

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use qp::{least_distance, nnls, qp_solve_box_active_set, qp_solve_box_halfspace};
pub use stats::{ActionAxis, ActionLayout, NormStats};

use crate::diffusion::ActionChunk;
use crate::error::{Error, Result};
use crate::geometry::{checked_asin, ManipulatorConfig, RobotState};

pub const DEFAULT_EPS_SAFE: f64 = 0.01;
pub const DEFAULT_EPS_TASK: f64 = 0.05;

/// How the running height along the horizon is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulativeMode {
    /// Earlier steps contribute their corrected displacement, so the executed
    /// trajectory respects the floor at every step.
    #[default]
    CorrectedPrefix,
    /// Earlier steps contribute their raw displacement and each step's
    /// correction is solved on its own.
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub eps_safe: f64,
    pub eps_task: f64,
    /// Action columns bounded by the height floor.
    pub floor_dims: Vec<usize>,
    /// Action columns whose tilt drift is bounded.
    pub rot_dims: Vec<usize>,
    pub d_ratio: f64,
    pub horizon: usize,
    pub layout: ActionLayout,
    /// State height at which TCP clearance is zero.
    pub floor_z: f64,
    #[serde(default)]
    pub cumulative: CumulativeMode,
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_safe > 0.0) || !self.eps_safe.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps_safe must be positive, got {}",
                self.eps_safe
            )));
        }
        if !(self.eps_task > 0.0) || !self.eps_task.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps_task must be positive, got {}",
                self.eps_task
            )));
        }
        if !(self.d_ratio > 0.0) || !self.d_ratio.is_finite() {
            return Err(Error::InvalidConfig("d_ratio must be positive".into()));
        }
        if !self.floor_z.is_finite() {
            return Err(Error::NonFinite("floor height"));
        }
        let axes = self.layout.axes();
        for &d in &self.floor_dims {
            if axes.get(d) != Some(&ActionAxis::Z) {
                return Err(Error::InvalidConfig(format!("floor dim {d} is not z")));
            }
        }
        for &d in &self.rot_dims {
            match axes.get(d) {
                Some(ActionAxis::Rx | ActionAxis::Ry) => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "rotation dim {d} is not a tilt axis"
                    )))
                }
            }
        }
        if self.floor_dims.iter().any(|d| self.rot_dims.contains(d)) {
            return Err(Error::InvalidConfig(
                "floor and rotation dims overlap".into(),
            ));
        }
        Ok(())
    }

    pub fn with_cumulative(mut self, mode: CumulativeMode) -> Self {
        self.cumulative = mode;
        self
    }

    pub fn with_floor(mut self, floor_z: f64) -> Self {
        self.floor_z = floor_z;
        self
    }

    fn f(&self, theta: f64) -> Result<f64> {
        if self.d_ratio == 1.0 {
            Ok(theta)
        } else {
            checked_asin(self.d_ratio * theta.sin())
        }
    }

    fn f_inv(&self, y: f64) -> Result<f64> {
        if self.d_ratio == 1.0 {
            Ok(y)
        } else {
            checked_asin(y.sin() / self.d_ratio)
        }
    }

    /// Tilt drift bound, evaluated as the constraint defines it.
    pub fn drift(&self, theta0: f64, delta: f64) -> Result<f64> {
        Ok(self.f(theta0 + delta)? - self.f(theta0)?)
    }
}

/// Builds the constraint set for running the base policy on `novel`.
///
/// The floor sits at the base configuration's EE-base height, so clearance is
/// measured in the adapted (base) frame the policy works in.
pub fn compile_constraints(
    base: &ManipulatorConfig,
    novel: &ManipulatorConfig,
    eps_safe: f64,
    eps_task: f64,
    horizon: usize,
    layout: &ActionLayout,
) -> Result<ConstraintSet> {
    base.validate()?;
    novel.validate()?;
    let axes = layout.axes();
    let cs = ConstraintSet {
        eps_safe,
        eps_task,
        floor_dims: layout.index_of(ActionAxis::Z).into_iter().collect(),
        rot_dims: (0..axes.len())
            .filter(|&i| matches!(axes[i], ActionAxis::Rx | ActionAxis::Ry))
            .collect(),
        d_ratio: base.tcp_arm_length / novel.tcp_arm_length,
        horizon,
        layout: layout.clone(),
        floor_z: base.ee_base_height,
        cumulative: CumulativeMode::default(),
    };
    cs.validate()?;
    Ok(cs)
}

/// Correction for one horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCorrection {
    /// ν over (x, y, z, θx, θy, θz). The rotational entries are in the
    /// constraint's mapped-angle space and are subtracted there.
    pub nu: [f64; 6],
    /// Change applied to each Cartesian action column.
    pub offset: Vec<f64>,
}

impl StepCorrection {
    fn zero(dim: usize) -> Self {
        Self {
            nu: [0.0; 6],
            offset: vec![0.0; dim],
        }
    }

    pub fn is_active(&self) -> bool {
        self.nu.iter().any(|v| *v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionVector {
    pub steps: Vec<StepCorrection>,
}

impl CorrectionVector {
    pub fn zero(horizon: usize, dim: usize) -> Self {
        Self {
            steps: vec![StepCorrection::zero(dim); horizon],
        }
    }

    pub fn is_zero(&self) -> bool {
        !self.steps.iter().any(StepCorrection::is_active)
    }

    pub fn norm(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.nu.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

struct StepInput<'a> {
    clearance: f64,
    theta0: &'a [f64],
    rot_prefix: &'a [f64],
}

fn solve_step(input: &StepInput<'_>, cart: &[f64], cs: &ConstraintSet) -> Result<StepCorrection> {
    let axes = cs.layout.axes();
    let nf = cs.floor_dims.len();
    let mut q = Vec::with_capacity(nf + cs.rot_dims.len());
    let mut lower = Vec::with_capacity(q.capacity());
    let mut upper = Vec::with_capacity(q.capacity());
    for &d in &cs.floor_dims {
        q.push(input.clearance + cart[d]);
        lower.push(cs.eps_safe);
        upper.push(f64::INFINITY);
    }
    let mut raw_abs = Vec::with_capacity(cs.rot_dims.len());
    let mut f0 = Vec::with_capacity(cs.rot_dims.len());
    for (r, &d) in cs.rot_dims.iter().enumerate() {
        let abs = input.theta0[r] + input.rot_prefix[r] + cart[d];
        let base = cs.f(input.theta0[r])?;
        q.push(cs.f(abs)? - base);
        lower.push(-cs.eps_task);
        upper.push(cs.eps_task);
        raw_abs.push(abs);
        f0.push(base);
    }
    let sol = qp_solve_box_halfspace(&q, &lower, &upper)?;

    let mut out = StepCorrection::zero(axes.len());
    for (i, &d) in cs.floor_dims.iter().enumerate() {
        if sol[i] != 0.0 {
            out.nu[2] = sol[i];
            out.offset[d] = sol[i];
        }
    }
    for (r, &d) in cs.rot_dims.iter().enumerate() {
        let s = sol[nf + r];
        if s != 0.0 {
            let nu = -s;
            out.nu[axes[d].cartesian_index().expect("tilt axis")] = nu;
            let corrected = cs.f_inv(f0[r] + q[nf + r] - nu)?;
            out.offset[d] = corrected - raw_abs[r];
        }
    }
    Ok(out)
}

/// Minimal-norm correction of one Cartesian action.
///
/// `z_t` is the TCP clearance above the floor before the action and `theta_t`
/// holds the current angle for each of `cs.rot_dims`.
pub fn project_step(
    z_t: f64,
    theta_t: &[f64],
    cart_action: &[f64],
    cs: &ConstraintSet,
) -> Result<StepCorrection> {
    check_inputs(theta_t.len(), cart_action.len(), cs)?;
    if !z_t.is_finite() || theta_t.iter().chain(cart_action).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    let zeros = vec![0.0; theta_t.len()];
    solve_step(
        &StepInput {
            clearance: z_t,
            theta0: theta_t,
            rot_prefix: &zeros,
        },
        cart_action,
        cs,
    )
}

fn check_inputs(n_theta: usize, n_action: usize, cs: &ConstraintSet) -> Result<()> {
    if n_theta != cs.rot_dims.len() {
        return Err(Error::ShapeMismatch {
            expected: (1, cs.rot_dims.len()),
            found: (1, n_theta),
        });
    }
    if n_action != cs.layout.dim() {
        return Err(Error::ShapeMismatch {
            expected: (1, cs.layout.dim()),
            found: (1, n_action),
        });
    }
    Ok(())
}

/// Tilt angles of `state` for each constrained rotation column.
pub fn constrained_angles(state: &RobotState, cs: &ConstraintSet) -> Vec<f64> {
    cs.rot_dims
        .iter()
        .map(|&d| state.rotation[cs.layout.axes()[d].cartesian_index().expect("tilt axis") - 3])
        .collect()
}

/// Projects a whole chunk, step by step along the horizon.
///
/// Only entries that receive a nonzero correction are rewritten, so a chunk
/// that already satisfies every constraint comes back unchanged.
pub fn project_horizon(
    state_t: &RobotState,
    chunk: &ActionChunk,
    stats: &NormStats,
    cs: &ConstraintSet,
) -> Result<(ActionChunk, CorrectionVector)> {
    if chunk.horizon() != cs.horizon {
        return Err(Error::ShapeMismatch {
            expected: (cs.horizon, cs.layout.dim()),
            found: chunk.shape(),
        });
    }
    check_inputs(cs.rot_dims.len(), chunk.action_dim(), cs)?;
    let cart = stats.denormalize_rows(&chunk.latent)?;
    let theta0 = constrained_angles(state_t, cs);
    let clearance0 = state_t.position[2] - cs.floor_z;

    let mut latent = chunk.latent.clone();
    let mut z_prefix = 0.0;
    let mut rot_prefix = vec![0.0; cs.rot_dims.len()];
    let mut steps = Vec::with_capacity(cs.horizon);
    for j in 0..cs.horizon {
        let row: Vec<f64> = cart.row(j).to_vec();
        let step = solve_step(
            &StepInput {
                clearance: clearance0 + z_prefix,
                theta0: &theta0,
                rot_prefix: &rot_prefix,
            },
            &row,
            cs,
        )?;
        let corrected = cs.cumulative == CumulativeMode::CorrectedPrefix;
        for &d in &cs.floor_dims {
            z_prefix += row[d] + if corrected { step.offset[d] } else { 0.0 };
        }
        for (r, &d) in cs.rot_dims.iter().enumerate() {
            rot_prefix[r] += row[d] + if corrected { step.offset[d] } else { 0.0 };
        }
        for (d, off) in step.offset.iter().enumerate() {
            if *off != 0.0 {
                latent[(j, d)] = stats.normalize_value(d, row[d] + off);
            }
        }
        steps.push(step);
    }
    Ok((ActionChunk::new(latent)?, CorrectionVector { steps }))
}

/// Largest floor and drift violations of a Cartesian chunk executed from
/// `state_t`, as (clearance shortfall, drift excess); both ≤ 0 when feasible.
pub fn constraint_violation(
    state_t: &RobotState,
    cart: &Array2<f64>,
    cs: &ConstraintSet,
) -> Result<(f64, f64)> {
    let theta0 = constrained_angles(state_t, cs);
    let mut z = state_t.position[2] - cs.floor_z;
    let mut rot = vec![0.0; cs.rot_dims.len()];
    let mut floor_worst = f64::NEG_INFINITY;
    let mut drift_worst = f64::NEG_INFINITY;
    for row in cart.rows() {
        for &d in &cs.floor_dims {
            z += row[d];
            floor_worst = floor_worst.max(cs.eps_safe - z);
        }
        for (r, &d) in cs.rot_dims.iter().enumerate() {
            rot[r] += row[d];
            drift_worst = drift_worst.max(cs.drift(theta0[r], rot[r])?.abs() - cs.eps_task);
        }
    }
    Ok((floor_worst, drift_worst))
}

/// Writes one CSV row per (step, action column): raw value, ν component and
/// corrected value, all in Cartesian units.
pub fn write_correction_csv<W: Write>(
    out: W,
    raw_cart: &Array2<f64>,
    corrections: &CorrectionVector,
    layout: &ActionLayout,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "dim", "raw", "nu", "corrected"])?;
    for (j, step) in corrections.steps.iter().enumerate() {
        for (d, axis) in layout.axes().iter().enumerate() {
            let raw = raw_cart[(j, d)];
            let nu = axis.cartesian_index().map_or(0.0, |c| step.nu[c]);
            w.serialize((j, axis.name(), raw, nu, raw + step.offset[d]))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_catalog;
    use ndarray::array;

    fn cs(horizon: usize) -> ConstraintSet {
        let c = default_catalog();
        compile_constraints(
            &c[0],
            &c[0],
            DEFAULT_EPS_SAFE,
            DEFAULT_EPS_TASK,
            horizon,
            &ActionLayout::translation_tilt(),
        )
        .unwrap()
        .with_floor(0.0)
    }

    #[test]
    fn compile_defaults() {
        let c = cs(8);
        assert_eq!((c.eps_safe, c.eps_task, c.d_ratio), (0.01, 0.05, 1.0));
        assert_eq!(c.floor_dims, vec![2]);
        assert_eq!(c.rot_dims, vec![3]);
        let cat = default_catalog();
        let lay = ActionLayout::translation_tilt();
        assert!(compile_constraints(&cat[0], &cat[1], 0.0, 0.05, 8, &lay).is_err());
        assert!(compile_constraints(&cat[0], &cat[1], 0.01, -1.0, 8, &lay).is_err());
    }

    #[test]
    fn feasible_step_is_untouched() {
        let s = project_step(0.5, &[0.0], &[0.0, 0.0, -0.1, 0.01], &cs(1)).unwrap();
        assert!(!s.is_active());
        assert!(s.offset.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn floor_step() {
        // clearance + dz = -0.02
        let s = project_step(0.0, &[0.0], &[0.0, 0.0, -0.02, 0.0], &cs(1)).unwrap();
        assert!((s.nu[2] - 0.03).abs() < 1e-15);
        assert!((s.offset[2] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn drift_step() {
        let s = project_step(1.0, &[0.0], &[0.0, 0.0, 0.0, 0.2], &cs(1)).unwrap();
        assert!((s.nu[3] - 0.15).abs() < 1e-15);
        assert!((s.offset[3] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn cumulative_floor() {
        let c = cs(4);
        let stats = NormStats::identity(4);
        let state = RobotState::new([0.0, 0.0, 0.05], [0.0; 3], 0.0);
        let chunk = ActionChunk::new(Array2::from_shape_fn((4, 4), |(_, d)| {
            if d == 2 {
                -0.02
            } else {
                0.0
            }
        }))
        .unwrap();
        let (out, nu) = project_horizon(&state, &chunk, &stats, &c).unwrap();
        let mut z = 0.05;
        let expect_h = [0.03, 0.01, 0.01, 0.01];
        let expect_nu = [0.0, 0.0, 0.02, 0.02];
        for j in 0..4 {
            z += out.latent[(j, 2)];
            assert!((z - expect_h[j]).abs() < 1e-12, "step {j}: {z}");
            assert!((nu.steps[j].nu[2] - expect_nu[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn as_printed_mode_differs() {
        let c = cs(4).with_cumulative(CumulativeMode::AsPrinted);
        let stats = NormStats::identity(4);
        let state = RobotState::new([0.0, 0.0, 0.05], [0.0; 3], 0.0);
        let chunk = ActionChunk::new(Array2::from_shape_fn((4, 4), |(_, d)| {
            if d == 2 {
                -0.02
            } else {
                0.0
            }
        }))
        .unwrap();
        let (_, nu) = project_horizon(&state, &chunk, &stats, &c).unwrap();
        let got: Vec<f64> = nu.steps.iter().map(|s| s.nu[2]).collect();
        for (g, e) in got.iter().zip([0.0, 0.0, 0.02, 0.04]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn horizon_shape_checked() {
        let c = cs(4);
        let chunk = ActionChunk::zeros(3, 4);
        let state = RobotState::new([0.0, 0.0, 0.5], [0.0; 3], 0.0);
        assert!(project_horizon(&state, &chunk, &NormStats::identity(4), &c).is_err());
    }

    #[test]
    fn unequal_arms_drift_bound() {
        let mut c = cs(3);
        c.d_ratio = 0.6;
        let stats = NormStats::identity(4);
        let state = RobotState::new([0.0, 0.0, 1.0], [0.3, 0.0, 0.0], 0.0);
        let chunk = ActionChunk::new(array![
            [0.0, 0.0, 0.0, 0.1],
            [0.0, 0.0, 0.0, 0.1],
            [0.0, 0.0, 0.0, -0.3]
        ])
        .unwrap();
        let (out, _) = project_horizon(&state, &chunk, &stats, &c).unwrap();
        let (_, drift) = constraint_violation(&state, &out.latent, &c).unwrap();
        assert!(drift <= 1e-9);
    }

    #[test]
    fn csv_export() {
        let c = cs(1);
        let raw = array![[0.0, 0.0, -0.02, 0.0]];
        let s = project_step(0.0, &[0.0], &raw.row(0).to_vec(), &c).unwrap();
        let mut buf = Vec::new();
        write_correction_csv(
            &mut buf,
            &raw,
            &CorrectionVector { steps: vec![s] },
            &c.layout,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,dim,raw,nu,corrected\n"));
        let z_row = text.lines().find(|l| l.starts_with("0,z,")).unwrap();
        let cols: Vec<f64> = z_row
            .split(',')
            .skip(2)
            .map(|c| c.parse().unwrap())
            .collect();
        assert_eq!(cols[..2], [-0.02, 0.03]);
        assert!((cols[2] - 0.01).abs() < 1e-15);
    }
}
