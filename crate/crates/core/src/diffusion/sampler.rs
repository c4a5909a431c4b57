use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::chunk::{ActionChunk, Observation};
use super::predictor::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// `sqrt(ab_k) * x0 + sqrt(1 - ab_k) * noise`.
pub fn forward_noise(
    chunk: &ActionChunk,
    k: usize,
    noise: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<ActionChunk> {
    if k > schedule.num_steps() {
        return Err(Error::StepOutOfRange {
            k,
            max: schedule.num_steps(),
        });
    }
    chunk.check_shape(noise)?;
    let ab = schedule.alpha_bar(k);
    Ok(ActionChunk {
        latent: &chunk.latent * ab.sqrt() + noise * (1.0 - ab).sqrt(),
    })
}

/// Deterministic (eta = 0) DDIM update from step `from` to step `to < from`.
pub fn ddim_transition(
    chunk: &ActionChunk,
    obs: &Observation,
    from: usize,
    to: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
) -> Result<ActionChunk> {
    schedule.check_step(from)?;
    if to >= from {
        return Err(Error::StepOutOfRange {
            k: to,
            max: from - 1,
        });
    }
    transition(chunk, obs, from, to, predictor, schedule, None)
}

fn transition(
    chunk: &ActionChunk,
    obs: &Observation,
    from: usize,
    to: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    clip: Option<f64>,
) -> Result<ActionChunk> {
    let eps = predictor.predict(&chunk.latent, obs, from);
    chunk.check_shape(&eps)?;
    Ok(ActionChunk {
        latent: ddim_update(
            &chunk.latent,
            &eps,
            schedule.alpha_bar(from),
            schedule.alpha_bar(to),
            clip,
        ),
    })
}

fn ddim_update(
    x: &Array2<f64>,
    eps: &Array2<f64>,
    ab: f64,
    ab_prev: f64,
    clip: Option<f64>,
) -> Array2<f64> {
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sa_prev, sn_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let mut out = x.clone();
    ndarray::Zip::from(&mut out).and(eps).for_each(|o, &e| {
        let mut x0 = (*o - sn * e) / sa;
        if let Some(c) = clip {
            x0 = x0.clamp(-c, c);
        }
        *o = sa_prev * x0 + sn_prev * e;
    });
    out
}

/// One reverse step `k -> k - 1`.
pub fn ddim_step(
    chunk: &ActionChunk,
    obs: &Observation,
    k: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
) -> Result<ActionChunk> {
    schedule.check_step(k)?;
    ddim_transition(chunk, obs, k, k - 1, predictor, schedule)
}

/// Strided DDIM sampler over `substeps` evenly spaced steps.
#[derive(Debug, Clone)]
pub struct DdimSampler {
    schedule: NoiseSchedule,
    timesteps: Vec<usize>,
    clip_sample: Option<f64>,
}

impl DdimSampler {
    pub fn new(schedule: &NoiseSchedule, substeps: usize) -> Result<Self> {
        Ok(Self {
            timesteps: schedule.inference_timesteps(substeps)?,
            schedule: schedule.clone(),
            clip_sample: None,
        })
    }

    /// Clamp each clean-sample estimate to `[-c, c]` before stepping.
    pub fn with_clip_sample(mut self, clip: Option<f64>) -> Self {
        self.clip_sample = clip;
        self
    }

    pub fn clip_sample(&self) -> Option<f64> {
        self.clip_sample
    }

    pub fn substeps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Draws the initial chunk `a^K ~ N(0, I)`.
    pub fn initial_noise<R: Rng + ?Sized>(
        horizon: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> ActionChunk {
        ActionChunk {
            latent: Array2::from_shape_simple_fn((horizon, action_dim), || {
                rng.sample(StandardNormal)
            }),
        }
    }

    /// Denoises `initial` down to step 0.
    ///
    /// After each update `on_step(i, chunk)` is called with the substep index
    /// `i` of the chunk just produced (`S - 1` first, `0` last) and may modify
    /// it in place.
    pub fn sample<F>(
        &self,
        initial: ActionChunk,
        obs: &Observation,
        predictor: &dyn NoisePredictor,
        mut on_step: F,
    ) -> Result<ActionChunk>
    where
        F: FnMut(usize, &mut ActionChunk) -> Result<()>,
    {
        let mut chunk = initial;
        for i in (1..=self.timesteps.len()).rev() {
            let from = self.timesteps[i - 1];
            let to = if i >= 2 { self.timesteps[i - 2] } else { 0 };
            chunk = transition(
                &chunk,
                obs,
                from,
                to,
                predictor,
                &self.schedule,
                self.clip_sample,
            )?;
            if !chunk.is_finite() {
                return Err(Error::NonFinite("noise predictor"));
            }
            on_step(i - 1, &mut chunk)?;
        }
        Ok(chunk)
    }
}

/// A training example with its diffusion step and injected noise fixed.
#[derive(Debug, Clone)]
pub struct NoisedSample<'a> {
    pub chunk: &'a ActionChunk,
    pub obs: &'a Observation,
    pub k: usize,
    pub noise: Array2<f64>,
}

/// Noise-prediction MSE with steps and noise already drawn.
pub fn noise_prediction_loss(
    predictor: &dyn NoisePredictor,
    samples: &[NoisedSample<'_>],
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        schedule.check_step(s.k)?;
        let noisy = forward_noise(s.chunk, s.k, &s.noise, schedule)?;
        let pred = predictor.predict(&noisy.latent, s.obs, s.k);
        s.chunk.check_shape(&pred)?;
        total += (&pred - &s.noise).mapv(|d| d * d).mean().unwrap_or(0.0);
    }
    Ok(total / samples.len() as f64)
}

/// Monte Carlo noise-prediction MSE over a batch, drawing one step
/// `k ~ U{1..K}` and one standard-normal noise per item.
pub fn training_loss<R: Rng + ?Sized>(
    predictor: &dyn NoisePredictor,
    batch: &[(ActionChunk, Observation)],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    let samples: Vec<_> = batch
        .iter()
        .map(|(chunk, obs)| NoisedSample {
            chunk,
            obs,
            k: rng.random_range(1..=schedule.num_steps()),
            noise: DdimSampler::initial_noise(chunk.horizon(), chunk.action_dim(), rng).latent,
        })
        .collect();
    noise_prediction_loss(predictor, &samples, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::predictor::ZeroPredictor;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Replays a fixed noise tensor regardless of input.
    struct Fixed(Array2<f64>);
    impl NoisePredictor for Fixed {
        fn predict(&self, _: &Array2<f64>, _: &Observation, _: usize) -> Array2<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn forward_noise_examples() {
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
        let c = ActionChunk::new(array![[1.0, 0.0]]).unwrap();
        let out = forward_noise(&c, 1, &array![[0.0, 1.0]], &s).unwrap();
        assert!((out.latent[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((out.latent[[0, 1]] - 0.75f64.sqrt()).abs() < 1e-15);

        let s = NoiseSchedule::default();
        assert_eq!(forward_noise(&c, 0, &array![[3.0, 3.0]], &s).unwrap(), c);
        let scaled = forward_noise(&c, 10, &array![[0.0, 0.0]], &s).unwrap();
        assert_eq!(scaled.latent, &c.latent * s.alpha_bar(10).sqrt());
        assert!(forward_noise(&c, 0, &array![[0.0]], &s).is_err());
        assert!(forward_noise(&c, 101, &array![[0.0, 0.0]], &s).is_err());
    }

    #[test]
    fn true_noise_inverts_forward() {
        let s = NoiseSchedule::default();
        let x0 = ActionChunk::new(array![[0.3, -0.2], [0.1, 0.9]]).unwrap();
        let eps = array![[0.5, -1.0], [2.0, 0.1]];
        let xk = forward_noise(&x0, 1, &eps, &s).unwrap();
        let out = ddim_step(&xk, &Observation::empty(), 1, &Fixed(eps), &s).unwrap();
        for (a, b) in out.latent.iter().zip(x0.latent.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_schedule_recovers_data() {
        let s = NoiseSchedule::from_betas(vec![0.9]).unwrap();
        let x0 = ActionChunk::new(array![[0.7, -0.4]]).unwrap();
        let eps = array![[1.2, 0.3]];
        let xk = forward_noise(&x0, 1, &eps, &s).unwrap();
        let sampler = DdimSampler::new(&s, 1).unwrap();
        let out = sampler
            .sample(xk, &Observation::empty(), &Fixed(eps), |_, _| Ok(()))
            .unwrap();
        for (a, b) in out.latent.iter().zip(x0.latent.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_range_checked() {
        let s = NoiseSchedule::default();
        let c = ActionChunk::zeros(2, 2);
        let o = Observation::empty();
        assert!(matches!(
            ddim_step(&c, &o, 0, &ZeroPredictor, &s),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(ddim_step(&c, &o, 101, &ZeroPredictor, &s).is_err());
    }

    #[test]
    fn substep_indices_descend() {
        let s = NoiseSchedule::default();
        let sampler = DdimSampler::new(&s, 16).unwrap();
        let mut seen = Vec::new();
        sampler
            .sample(
                ActionChunk::zeros(2, 2),
                &Observation::empty(),
                &ZeroPredictor,
                |i, _| {
                    seen.push(i);
                    Ok(())
                },
            )
            .unwrap();
        assert_eq!(seen, (0..16).rev().collect::<Vec<_>>());
    }

    #[test]
    fn injected_noise_gives_zero_loss() {
        let s = NoiseSchedule::default();
        let c = ActionChunk::new(array![[0.2, 0.4]]).unwrap();
        let o = Observation::empty();
        let noise = array![[0.3, -1.1]];
        let sample = NoisedSample {
            chunk: &c,
            obs: &o,
            k: 37,
            noise: noise.clone(),
        };
        let loss = noise_prediction_loss(&Fixed(noise), &[sample], &s).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn zero_predictor_loss_near_one() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<_> = (0..400)
            .map(|_| (ActionChunk::zeros(8, 4), Observation::empty()))
            .collect();
        let loss = training_loss(&ZeroPredictor, &batch, &s, &mut rng).unwrap();
        // 12800 unit-variance squares: sd of the mean is sqrt(2 / 12800) ~ 0.0125
        assert!((loss - 1.0).abs() < 0.05, "loss {loss}");
        assert!(training_loss(&ZeroPredictor, &[], &s, &mut rng).is_err());
    }
}
