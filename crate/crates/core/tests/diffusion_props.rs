use cdp_core::diffusion::{
    analytic_gaussian_predictor, ddim_transition, forward_noise, noise_prediction_loss,
    ActionChunk, DdimSampler, NoisePredictor, NoiseSchedule, NoisedSample, Observation,
    ZeroPredictor,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Replay(Array2<f64>);

impl NoisePredictor for Replay {
    fn predict(&self, _: &Array2<f64>, _: &Observation, _: usize) -> Array2<f64> {
        self.0.clone()
    }
}

fn arb_latent(h: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0..2.0f64, h * d)
        .prop_map(move |v| Array2::from_shape_vec((h, d), v).unwrap())
}

proptest! {
    #[test]
    fn shapes_preserved(h in 1..10usize, d in 1..6usize, k in 1..=100usize, seed in any::<u64>()) {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DdimSampler::initial_noise(h, d, &mut rng);
        let noisy = forward_noise(&x, k, &x.latent, &s).unwrap();
        prop_assert_eq!(noisy.shape(), (h, d));
        let back = ddim_transition(&noisy, &Observation::empty(), k, k - 1, &ZeroPredictor, &s).unwrap();
        prop_assert_eq!(back.shape(), (h, d));
        let out = DdimSampler::new(&s, 16).unwrap()
            .sample(x, &Observation::empty(), &ZeroPredictor, |_, _| Ok(())).unwrap();
        prop_assert_eq!(out.shape(), (h, d));
    }

    #[test]
    fn sampling_deterministic(seed in any::<u64>(), m in -1.0..1.0f64, v in 0.1..2.0f64) {
        let s = NoiseSchedule::default();
        let p = analytic_gaussian_predictor(&[m, -m], &[v, 1.0], &s).unwrap();
        let sampler = DdimSampler::new(&s, 16).unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DdimSampler::initial_noise(4, 2, &mut rng);
            sampler.sample(x, &Observation::empty(), &p, |_, _| Ok(())).unwrap()
        };
        prop_assert_eq!(draw(), draw());
    }

    #[test]
    fn injected_noise_has_zero_loss(x0 in arb_latent(3, 2), noise in arb_latent(3, 2), k in 1..=100usize) {
        let s = NoiseSchedule::default();
        let chunk = ActionChunk::new(x0).unwrap();
        let obs = Observation::empty();
        let sample = NoisedSample { chunk: &chunk, obs: &obs, k, noise: noise.clone() };
        prop_assert_eq!(noise_prediction_loss(&Replay(noise), &[sample], &s).unwrap(), 0.0);
    }

    #[test]
    fn exact_noise_recovers_clean_chunk(x0 in arb_latent(2, 3), noise in arb_latent(2, 3), k in 1..=100usize) {
        let s = NoiseSchedule::default();
        let chunk = ActionChunk::new(x0).unwrap();
        let noisy = forward_noise(&chunk, k, &noise, &s).unwrap();
        let out = ddim_transition(&noisy, &Observation::empty(), k, 0, &Replay(noise), &s).unwrap();
        for (a, b) in out.latent.iter().zip(chunk.latent.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
