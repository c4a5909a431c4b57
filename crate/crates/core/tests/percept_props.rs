use cdp_core::percept::{
    add_salt_noise, circular_mask, read_pgm, stabilize, synthetic_blob, write_pgm, GraspProbMap,
    PgmDepth, DEFAULT_TAU,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_is_binary(cx in 10.0..90.0f64, cy in 10.0..90.0f64, sigma in 2.0..20.0f64, salt in 0.0..0.05f64, seed in any::<u64>()) {
        let mut m = synthetic_blob(100, 100, (cx, cy), sigma, 1.0);
        add_salt_noise(&mut m, salt, &mut ChaCha8Rng::seed_from_u64(seed));
        let s = stabilize(&m, DEFAULT_TAU, 30.0);
        prop_assert!(s.map.values().iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn translation_equivariant(cx in 40.0..60.0f64, cy in 40.0..60.0f64, du in -20i32..20, dv in -20i32..20) {
        let a = stabilize(&synthetic_blob(120, 120, (cx, cy), 6.0, 1.0), DEFAULT_TAU, 10.0);
        let b = stabilize(
            &synthetic_blob(120, 120, (cx + du as f64, cy + dv as f64), 6.0, 1.0),
            DEFAULT_TAU,
            10.0,
        );
        let (ca, cb) = (a.center.unwrap(), b.center.unwrap());
        prop_assert!((cb.0 - ca.0 - du as f64).abs() <= 1.0);
        prop_assert!((cb.1 - ca.1 - dv as f64).abs() <= 1.0);
    }

    #[test]
    fn radius_monotone(cx in 0.0..50.0f64, cy in 0.0..50.0f64, r1 in 0.5..20.0f64, extra in 0.0..20.0f64) {
        let small = circular_mask((cx, cy), r1, 50, 50);
        let large = circular_mask((cx, cy), r1 + extra, 50, 50);
        for (a, b) in small.values().iter().zip(large.values()) {
            prop_assert!(*a <= *b);
        }
    }

    #[test]
    fn mask_matches_brute_force(cx in -5.0..45.0f64, cy in -5.0..45.0f64, r in 0.5..30.0f64) {
        let m = circular_mask((cx, cy), r, 40, 40);
        for v in 0..40 {
            for u in 0..40 {
                let inside = ((u as f64 - cx).powi(2) + (v as f64 - cy).powi(2)).sqrt() <= r;
                prop_assert_eq!(m.get(u, v), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn pgm_round_trip_within_quantum(values in prop::collection::vec(0.0..=1.0f64, 12)) {
        let m = GraspProbMap::new(4, 3, values).unwrap();
        for depth in [PgmDepth::Eight, PgmDepth::Sixteen] {
            let mut buf = Vec::new();
            write_pgm(&m, depth, &mut buf).unwrap();
            let back = read_pgm(&buf[..]).unwrap();
            let q = 0.5 / depth.maxval() as f64 + 1e-15;
            for (a, b) in m.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= q);
            }
        }
    }
}

#[test]
fn corner_quarter_disc_count() {
    let r = 10.0;
    let m = circular_mask((0.0, 0.0), r, 30, 30);
    let brute = (0..30)
        .flat_map(|v| (0..30).map(move |u| (u, v)))
        .filter(|&(u, v)| ((u * u + v * v) as f64).sqrt() <= r)
        .count();
    assert_eq!(m.ones().len(), brute);
}

#[test]
fn full_disc_area_near_analytic() {
    let r = 30.0;
    let m = circular_mask((100.0, 100.0), r, 200, 200);
    let area = std::f64::consts::PI * r * r;
    assert!((m.ones().len() as f64 - area).abs() <= 4.0 * r + 4.0);
}
