use cdp_core::diffusion::ActionChunk;
use cdp_core::geometry::RobotState;
use cdp_core::projection::{
    constraint_violation, project_horizon, project_step, qp_solve_box_active_set,
    qp_solve_box_halfspace, ActionLayout, ConstraintSet, CumulativeMode, NormStats,
};
use ndarray::Array2;
use proptest::prelude::*;

const H: usize = 6;

fn constraints(d_ratio: f64, floor_z: f64) -> ConstraintSet {
    ConstraintSet {
        eps_safe: 0.01,
        eps_task: 0.05,
        floor_dims: vec![2],
        rot_dims: vec![3],
        d_ratio,
        horizon: H,
        layout: ActionLayout::translation_tilt(),
        floor_z,
        cumulative: CumulativeMode::CorrectedPrefix,
    }
}

fn stats() -> NormStats {
    NormStats::new(vec![0.0, 0.0, -0.005, 0.0], vec![0.02, 0.02, 0.02, 0.02]).unwrap()
}

fn arb_chunk() -> impl Strategy<Value = ActionChunk> {
    prop::collection::vec(-1.5..1.5f64, H * 4)
        .prop_map(|v| ActionChunk::new(Array2::from_shape_vec((H, 4), v).unwrap()).unwrap())
}

prop_compose! {
    fn arb_case()(d_ratio in 0.8..1.25f64, z in -0.03..0.08f64, theta in -0.4..0.4f64, chunk in arb_chunk())
        -> (ConstraintSet, RobotState, ActionChunk) {
        let cs = constraints(d_ratio, 0.2);
        let state = RobotState::new([0.0, 0.0, 0.2 + z], [theta, 0.0, 0.0], 0.05);
        (cs, state, chunk)
    }
}

/// Executed Cartesian actions after projecting `chunk`.
fn corrected_cart(cs: &ConstraintSet, state: &RobotState, chunk: &ActionChunk) -> Array2<f64> {
    let (out, _) = project_horizon(state, chunk, &stats(), cs).unwrap();
    stats().denormalize_rows(&out.latent).unwrap()
}

proptest! {
    #[test]
    fn step_is_minimal_norm(
        z in -0.03..0.05f64,
        theta in -0.4..0.4f64,
        d_ratio in 0.8..1.25f64,
        cart in prop::array::uniform4(-0.05..0.05f64),
        probes in prop::collection::vec(prop::array::uniform2(-0.1..0.1f64), 64),
    ) {
        let mut cs = constraints(d_ratio, 0.0);
        cs.horizon = 1;
        let step = project_step(z, &[theta], &cart, &cs).unwrap();
        let f = |t: f64| (d_ratio * t.sin()).asin();
        let q = f(theta + cart[3]) - f(theta);
        let (nz, nt) = (step.nu[2], step.nu[3]);
        prop_assert!(z + cart[2] + nz >= 0.01 - 1e-12);
        prop_assert!((q - nt).abs() <= 0.05 + 1e-12);
        let best = (nz * nz + nt * nt).sqrt();
        for [pz, pt] in probes {
            let (cz, ct) = (nz + pz, nt + pt);
            if z + cart[2] + cz >= 0.01 && (q - ct).abs() <= 0.05 {
                prop_assert!((cz * cz + ct * ct).sqrt() >= best - 1e-9);
            }
        }
        prop_assert_eq!([step.nu[0], step.nu[1], step.nu[4], step.nu[5]], [0.0; 4]);
    }

    #[test]
    fn corrected_trajectory_clears_floor((cs, state, chunk) in arb_case()) {
        let cart = corrected_cart(&cs, &state, &chunk);
        let mut z = state.position[2] - cs.floor_z;
        for row in cart.rows() {
            z += row[2];
            prop_assert!(z >= cs.eps_safe - 1e-9, "clearance {z}");
        }
    }

    #[test]
    fn corrected_drift_bounded((cs, state, chunk) in arb_case()) {
        let cart = corrected_cart(&cs, &state, &chunk);
        let (floor, drift) = constraint_violation(&state, &cart, &cs).unwrap();
        prop_assert!(floor <= 1e-9 && drift <= 1e-9, "floor {floor} drift {drift}");
    }

    #[test]
    fn projection_idempotent((cs, state, chunk) in arb_case()) {
        let (once, _) = project_horizon(&state, &chunk, &stats(), &cs).unwrap();
        let (twice, corr) = project_horizon(&state, &once, &stats(), &cs).unwrap();
        for (a, b) in once.latent.iter().zip(twice.latent.iter()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert!(corr.norm() <= 1e-9);
    }

    #[test]
    fn feasible_chunk_untouched(d_ratio in 0.8..1.25f64, chunk in arb_chunk(), theta in -0.3..0.3f64) {
        let cs = constraints(d_ratio, 0.0);
        let state = RobotState::new([0.0, 0.0, 1.0], [theta, 0.0, 0.0], 0.05);
        let cart = stats().denormalize_rows(&chunk.latent).unwrap();
        let (_, drift) = constraint_violation(&state, &cart, &cs).unwrap();
        prop_assume!(drift <= 0.0);
        let (out, corr) = project_horizon(&state, &chunk, &stats(), &cs).unwrap();
        prop_assert!(corr.is_zero());
        prop_assert_eq!(out, chunk);
    }

    #[test]
    fn as_printed_mode_per_step_feasible((cs, state, chunk) in arb_case()) {
        // each step is solved against the raw prefix, so only the step itself is guaranteed
        let cs = cs.with_cumulative(CumulativeMode::AsPrinted);
        let (_, corr) = project_horizon(&state, &chunk, &stats(), &cs).unwrap();
        let cart = stats().denormalize_rows(&chunk.latent).unwrap();
        let mut z = state.position[2] - cs.floor_z;
        for (row, step) in cart.rows().into_iter().zip(&corr.steps) {
            prop_assert!(z + row[2] + step.offset[2] >= cs.eps_safe - 1e-9);
            z += row[2];
        }
    }

    #[test]
    fn solvers_agree(
        q in prop::collection::vec(-1.0..1.0f64, 1..7),
        bounds in prop::collection::vec((-1.0..1.0f64, 0.0..1.0f64, 0..4u8), 7),
    ) {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for &(l, w, kind) in bounds.iter().take(q.len()) {
            let (a, b) = match kind {
                0 => (l, f64::INFINITY),
                1 => (f64::NEG_INFINITY, l),
                2 => (f64::NEG_INFINITY, f64::INFINITY),
                _ => (l, l + w),
            };
            lo.push(a);
            hi.push(b);
        }
        let a = qp_solve_box_halfspace(&q, &lo, &hi).unwrap();
        let b = qp_solve_box_active_set(&q, &lo, &hi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn infeasible_box_rejected() {
    assert!(qp_solve_box_halfspace(&[0.0], &[1.0], &[0.0]).is_err());
    assert!(qp_solve_box_active_set(&[0.0], &[1.0], &[0.0]).is_err());
}
