use std::sync::Arc;

use cdp_core::diffusion::{analytic_gaussian_predictor, NoiseSchedule};
use cdp_core::geometry::{default_catalog, RobotState};
use cdp_core::pipeline::{
    denoise_chain, generate_trajectory, Mode, PolicyParts, PolicySession, SessionOptions,
};
use cdp_core::projection::{ActionLayout, NormStats};
use proptest::prelude::*;

fn parts(z_mean: f64) -> PolicyParts {
    let schedule = NoiseSchedule::default();
    let p = analytic_gaussian_predictor(&[0.2, 0.0, z_mean, 0.0], &[0.2, 0.2, 0.5, 0.2], &schedule)
        .unwrap();
    PolicyParts {
        predictor: Arc::new(p),
        schedule,
        obs_stats: NormStats::identity(RobotState::DIM),
        action_stats: NormStats::new(vec![0.0; 4], vec![0.02, 0.02, 0.02, 0.01]).unwrap(),
        layout: ActionLayout::translation_tilt(),
        horizon: 8,
        history_len: 1,
        base: default_catalog()[0].clone(),
    }
}

fn start(height: f64) -> RobotState {
    RobotState::new([0.3, 0.0, height], [0.1, 0.0, 0.0], 0.06)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn early_substeps_match_unconstrained(seed in any::<u64>(), window in 0..=5usize, novel_idx in 0..7usize) {
        let p = parts(-1.5);
        let novel = &default_catalog()[novel_idx];
        let opts = SessionOptions { projection_window: window, ..SessionOptions::default() };
        let with = PolicySession::new(&p, novel, Mode::WithAp, &opts).unwrap();
        let mut free = with.clone();
        free.projection_window = None;
        let raw = [start(novel.ee_base_height + 0.02)];
        let a = denoise_chain(&raw, &with, seed).unwrap();
        let b = denoise_chain(&raw, &free, seed).unwrap();
        let substeps = a.len();
        // chain entry e holds substep index substeps - 1 - e
        for e in 0..substeps - 1 - window {
            prop_assert_eq!(&a[e], &b[e]);
        }
    }

    #[test]
    fn emitted_trajectories_clear_floor(seed in any::<u64>(), clearance in -0.03..0.05f64, novel_idx in 0..7usize) {
        let p = parts(-2.0);
        let novel = &default_catalog()[novel_idx];
        let s = PolicySession::new(&p, novel, Mode::WithAp, &SessionOptions::default()).unwrap();
        let t = generate_trajectory(&[start(novel.ee_base_height + clearance)], &s, seed).unwrap();
        for w in &t.base_waypoints {
            prop_assert!(w.position[2] - s.constraints.floor_z >= 0.01 - 1e-9);
        }
    }

    #[test]
    fn identity_adaptation_matches_vanilla(seed in any::<u64>()) {
        // far above the floor with zero mean tilt the projection stays idle
        let p = parts(0.0);
        let base = p.base.clone();
        let opts = SessionOptions::default();
        let with = PolicySession::new(&p, &base, Mode::WithAp, &opts).unwrap();
        let without = PolicySession::new(&p, &base, Mode::WithoutAp, &opts).unwrap();
        let raw = [start(base.ee_base_height + 1.0)];
        let a = generate_trajectory(&raw, &with, seed).unwrap();
        let b = generate_trajectory(&raw, &without, seed).unwrap();
        prop_assume!(a.corrected.iter().all(|c| !c));
        prop_assert_eq!(a.waypoints, b.waypoints);
        prop_assert_eq!(a.latent, b.latent);
    }

    #[test]
    fn generation_deterministic(seed in any::<u64>(), novel_idx in 0..7usize) {
        let p = parts(-1.0);
        let novel = &default_catalog()[novel_idx];
        let s = PolicySession::new(&p, novel, Mode::WithAp, &SessionOptions::default()).unwrap();
        let raw = [start(novel.ee_base_height + 0.03)];
        prop_assert_eq!(
            generate_trajectory(&raw, &s, seed).unwrap(),
            generate_trajectory(&raw, &s, seed).unwrap()
        );
    }
}

#[test]
fn window_beyond_substeps_rejected() {
    let opts = SessionOptions {
        projection_window: 17,
        ..SessionOptions::default()
    };
    let p = parts(0.0);
    assert!(PolicySession::new(&p, &p.base, Mode::WithAp, &opts).is_err());
}
