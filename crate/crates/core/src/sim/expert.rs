//! Scripted base-frame experts.

use ndarray::Array2;

use super::{TaskKind, WorldConfig};
use crate::geometry::{ManipulatorConfig, RobotState};
use crate::pipeline::integrate;
use crate::projection::ActionLayout;

pub(crate) const PUSH_SPEED: f64 = 0.015;
pub(crate) const MAX_DZ: f64 = 0.012;
const MOVE: f64 = 0.04;
const LIFT: f64 = 0.03;
const TILT_RATE: f64 = 0.1;
/// Tolerance for "at the target" in the pick-and-place script.
const AT: f64 = 0.004;

pub fn layout_for(kind: TaskKind) -> ActionLayout {
    match kind {
        TaskKind::PickPlace => ActionLayout::with_gripper(),
        TaskKind::Push | TaskKind::PourTilt => ActionLayout::translation_tilt(),
    }
}

/// The expert's action at a base-frame state.
pub fn expert_action(cfg: &WorldConfig, base: &ManipulatorConfig, s: &RobotState) -> Vec<f64> {
    match cfg.kind {
        TaskKind::Push => push(cfg, base, s),
        TaskKind::PickPlace => pick_place(cfg, base, s),
        TaskKind::PourTilt => pour(cfg, s),
    }
}

/// The expert's next `horizon` actions, rolled out without noise.
pub fn expert_chunk(
    cfg: &WorldConfig,
    base: &ManipulatorConfig,
    start: &RobotState,
    horizon: usize,
) -> Array2<f64> {
    let layout = layout_for(cfg.kind);
    let mut out = Array2::zeros((horizon, layout.dim()));
    let mut s = *start;
    for j in 0..horizon {
        let a = expert_action(cfg, base, &s);
        out.row_mut(j).iter_mut().zip(&a).for_each(|(d, v)| *d = *v);
        let row = Array2::from_shape_vec((1, a.len()), a).expect("one row");
        s = integrate(&s, &row, &layout)[0];
    }
    out
}

fn push(cfg: &WorldConfig, base: &ManipulatorConfig, s: &RobotState) -> Vec<f64> {
    let h = s.position[2] - base.ee_base_height;
    let e = h - cfg.push_height;
    let dz = (-0.6 * e).clamp(-MAX_DZ, MAX_DZ);
    let dx = PUSH_SPEED * (1.0 - e.abs() / 0.01).clamp(0.0, 1.0);
    vec![dx, -0.5 * s.position[1], dz, -0.5 * s.rotation[0]]
}

fn toward(from: f64, to: f64, max: f64) -> f64 {
    (to - from).clamp(-max, max)
}

fn pick_place(cfg: &WorldConfig, base: &ManipulatorConfig, s: &RobotState) -> Vec<f64> {
    let g = &base.gripper;
    let h = s.position[2] - base.ee_base_height;
    let x = s.position[0];
    let open = s.gripper_width > g.grasp_width + 0.005;
    let dy = -0.5 * s.position[1];
    let dtheta = -0.5 * s.rotation[0];
    let grasp_h = 0.5 * cfg.object_height;
    let hover = cfg.base_platform_height + cfg.object_height + 0.05;
    let mut a = vec![0.0, dy, 0.0, dtheta, s.gripper_width];
    let near_platform = (x - cfg.platform_x).abs() < 0.05;
    if open {
        if near_platform {
            // released: back off upwards
            a[2] = toward(h, hover, LIFT);
            a[4] = g.max_width;
        } else if (x - cfg.object_x).abs() > AT {
            if h < grasp_h + 0.03 {
                a[2] = toward(h, grasp_h + 0.04, LIFT);
            } else {
                a[0] = toward(x, cfg.object_x, MOVE);
            }
            a[4] = g.max_width;
        } else if h > grasp_h + AT {
            a[0] = toward(x, cfg.object_x, MOVE);
            a[2] = toward(h, grasp_h, LIFT);
            a[4] = g.max_width;
        } else {
            a[4] = g.grasp_width;
        }
    } else {
        let place_h = cfg.base_platform_height + grasp_h;
        if (x - cfg.platform_x).abs() > AT {
            if h < hover - AT && (x - cfg.platform_x).abs() > 0.01 {
                a[2] = toward(h, hover, LIFT);
                if h > cfg.base_platform_height + cfg.object_height + 0.01 {
                    a[0] = toward(x, cfg.platform_x, MOVE);
                }
            } else {
                a[0] = toward(x, cfg.platform_x, MOVE);
            }
        } else if h > place_h + AT {
            a[0] = toward(x, cfg.platform_x, MOVE);
            a[2] = toward(h, place_h, LIFT);
        } else {
            a[4] = g.max_width;
        }
    }
    a
}

fn pour(cfg: &WorldConfig, s: &RobotState) -> Vec<f64> {
    vec![
        0.0,
        0.0,
        0.0,
        toward(s.rotation[0], cfg.target_tilt, TILT_RATE),
    ]
}
