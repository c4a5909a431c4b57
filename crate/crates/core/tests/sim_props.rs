use cdp_core::diffusion::NoiseSchedule;
use cdp_core::geometry::{default_catalog, RobotState};
use cdp_core::pipeline::{Mode, PolicySession, SessionOptions};
use cdp_core::sim::{
    expert_parts, generate_demos, run_episode, sweep_configs, TaskKind, World, WorldConfig,
};
use proptest::prelude::*;

fn kind(i: usize) -> TaskKind {
    [TaskKind::Push, TaskKind::PickPlace, TaskKind::PourTilt][i]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn episodes_deterministic(k in 0..3usize, cfg in 0..7usize, seed in any::<u64>(), with in any::<bool>()) {
        let world = WorldConfig::for_task(kind(k));
        let base = default_catalog()[0].clone();
        let novel = default_catalog()[cfg].clone();
        let ds = generate_demos(&world, &base, 4, 1.0, 3).unwrap();
        let parts = expert_parts(&ds, &NoiseSchedule::default(), 8, 1e-3).unwrap();
        let mode = if with { Mode::WithAp } else { Mode::WithoutAp };
        let s = PolicySession::new(&parts, &novel, mode, &SessionOptions::default()).unwrap();
        let run = || {
            let mut w = World::new(world.clone(), novel.clone(), seed).unwrap();
            run_episode(&mut w, &s, seed)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn world_stays_physical(
        k in 0..3usize,
        cfg in 0..7usize,
        seed in any::<u64>(),
        cmds in prop::collection::vec((prop::array::uniform3(-0.1..0.1f64), -0.3..0.3f64, -0.05..0.2f64), 1..30),
    ) {
        let novel = default_catalog()[cfg].clone();
        let mut w = World::new(WorldConfig::for_task(kind(k)), novel.clone(), seed).unwrap();
        for (dp, dth, width) in cmds {
            if w.is_done() {
                break;
            }
            let s = w.state();
            let next = RobotState::new(
                [s.position[0] + dp[0], s.position[1] + dp[1], s.position[2] + dp[2]],
                [s.rotation[0] + dth, s.rotation[1], s.rotation[2]],
                width,
            );
            w.apply(next).unwrap();
            prop_assert!(w.object().position[2] >= 0.0);
            let g = w.state().gripper_width;
            prop_assert!(g >= novel.gripper.min_width && g <= novel.gripper.max_width);
        }
    }
}

#[test]
fn adaptation_never_hurts_scripted_policy() {
    for k in 0..3 {
        let world = WorldConfig::for_task(kind(k));
        let catalog = default_catalog();
        let ds = generate_demos(&world, &catalog[0], 10, 1.0, 11).unwrap();
        let parts = expert_parts(&ds, &NoiseSchedule::default(), 8, 1e-3).unwrap();
        let report = sweep_configs(
            &catalog,
            &parts,
            &world,
            &[Mode::WithAp, Mode::WithoutAp],
            6,
            5,
            &SessionOptions::default(),
        )
        .unwrap();
        for c in &catalog {
            let with = report.get(&c.gripper.id, Mode::WithAp).unwrap();
            let without = report.get(&c.gripper.id, Mode::WithoutAp).unwrap();
            assert!(
                with.successes >= without.successes,
                "{:?} {}: {} < {}",
                kind(k),
                c.id(),
                with.successes,
                without.successes
            );
        }
    }
}
