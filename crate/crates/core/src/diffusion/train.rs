use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chunk::{ActionChunk, Observation};
use super::mlp::{Adam, Dense, Mlp};
use super::predictor::NoisePredictor;
use super::sampler::DdimSampler;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::geometry::RobotState;
use crate::projection::{ActionAxis, NormStats};

/// One recorded trajectory in the base configuration frame.
///
/// `actions[t]` was commanded at `states[t]`; actions are Cartesian, laid out
/// by the dataset's action axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub states: Vec<RobotState>,
    pub actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub step_embedding_dim: usize,
    pub horizon: usize,
    pub history_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch under cosine decay.
    pub final_learning_rate: f64,
    /// Lower bound on a normalization half-range, in the feature's own units.
    pub min_half_range: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            step_embedding_dim: 32,
            horizon: 8,
            history_len: 1,
            epochs: 1500,
            batch_size: 64,
            learning_rate: 2e-3,
            final_learning_rate: 1e-4,
            min_half_range: 1e-3,
            seed: 0,
        }
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let scale = if half > 1 {
        (10_000f64).ln() / (half - 1) as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        out.push((k as f64 * (-scale * i as f64).exp()).sin());
    }
    for i in 0..half {
        out.push((k as f64 * (-scale * i as f64).exp()).cos());
    }
    out
}

/// Feed-forward noise predictor on `[noisy chunk, observation features, step embedding]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPredictor {
    pub net: Mlp,
    pub horizon: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub step_embedding_dim: usize,
}

impl MlpPredictor {
    pub fn new<R: Rng + ?Sized>(
        horizon: usize,
        action_dim: usize,
        obs_dim: usize,
        hidden: &[usize],
        step_embedding_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![horizon * action_dim + obs_dim + step_embedding_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(horizon * action_dim);
        Self {
            net: Mlp::new(&sizes, rng),
            horizon,
            action_dim,
            obs_dim,
            step_embedding_dim,
        }
    }

    fn input_row(&self, latent: &[f64], features: &[f64], k: usize, row: &mut [f64]) {
        let n = latent.len();
        row[..n].copy_from_slice(latent);
        row[n..n + features.len()].copy_from_slice(features);
        row[n + self.obs_dim..].copy_from_slice(&step_embedding(k, self.step_embedding_dim));
    }

    fn input_width(&self) -> usize {
        self.horizon * self.action_dim + self.obs_dim + self.step_embedding_dim
    }

    /// Loss and parameter gradients on a fixed noised batch.
    pub fn loss_and_grad(
        &self,
        batch: &[FixedNoise<'_>],
        schedule: &NoiseSchedule,
    ) -> (f64, Vec<Dense>) {
        let width = self.input_width();
        let n = self.horizon * self.action_dim;
        let mut x = Array2::zeros((batch.len(), width));
        let mut target = Array2::zeros((batch.len(), n));
        for (i, item) in batch.iter().enumerate() {
            let ab = schedule.alpha_bar(item.k);
            let noisy = &item.example.chunk * ab.sqrt() + &item.noise * (1.0 - ab).sqrt();
            let flat: Vec<f64> = noisy.iter().copied().collect();
            self.input_row(
                &flat,
                &item.example.features,
                item.k,
                x.row_mut(i).as_slice_mut().unwrap(),
            );
            target
                .row_mut(i)
                .iter_mut()
                .zip(item.noise.iter())
                .for_each(|(t, e)| *t = *e);
        }
        let (out, cache) = self.net.forward_cached(&x);
        let diff = out - &target;
        let count = diff.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / count;
        let grads = self.net.backward(&cache, &(diff * (2.0 / count)));
        (loss, grads)
    }
}

impl NoisePredictor for MlpPredictor {
    fn predict(&self, latent: &Array2<f64>, obs: &Observation, k: usize) -> Array2<f64> {
        let mut row = Array2::zeros((1, self.input_width()));
        let flat: Vec<f64> = latent.iter().copied().collect();
        let features: Vec<f64> = obs
            .features
            .iter()
            .copied()
            .chain(std::iter::repeat(0.0))
            .take(self.obs_dim)
            .collect();
        self.input_row(&flat, &features, k, row.row_mut(0).as_slice_mut().unwrap());
        let out = self.net.forward(&row);
        Array2::from_shape_vec(latent.dim(), out.into_raw_vec_and_offset().0)
            .expect("network output matches chunk shape")
    }
}

/// A normalized (chunk, observation features) pair cut from a demonstration.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub chunk: Array2<f64>,
    pub features: Vec<f64>,
}

/// A training example with its step and noise drawn.
#[derive(Debug, Clone)]
pub struct FixedNoise<'a> {
    pub example: &'a TrainingExample,
    pub k: usize,
    pub noise: Array2<f64>,
}

impl TrainingExample {
    pub fn chunk(&self) -> ActionChunk {
        ActionChunk {
            latent: self.chunk.clone(),
        }
    }

    pub fn observation(&self) -> Observation {
        Observation {
            robot_state: RobotState::new([0.0; 3], [0.0; 3], 0.0),
            grasp_summary: None,
            history_len: 0,
            features: self.features.clone(),
        }
    }
}

pub fn validate_demos(demos: &[Demonstration], action_dim: usize) -> Result<()> {
    if demos.is_empty() || demos.iter().all(|d| d.actions.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    for (i, d) in demos.iter().enumerate() {
        if d.states.len() < d.actions.len() {
            return Err(Error::Format(format!(
                "demo {i}: {} states for {} actions",
                d.states.len(),
                d.actions.len()
            )));
        }
        if let Some(a) = d.actions.iter().find(|a| a.len() != action_dim) {
            return Err(Error::ShapeMismatch {
                expected: (1, action_dim),
                found: (1, a.len()),
            });
        }
    }
    Ok(())
}

/// Min-max statistics of the observed states and of the actions.
pub fn dataset_stats(
    demos: &[Demonstration],
    action_dim: usize,
    min_half_range: f64,
) -> Result<(NormStats, NormStats)> {
    validate_demos(demos, action_dim)?;
    let states: Vec<Vec<f64>> = demos
        .iter()
        .flat_map(|d| d.states.iter().map(|s| s.to_vec().to_vec()))
        .collect();
    let actions: Vec<Vec<f64>> = demos
        .iter()
        .flat_map(|d| d.actions.iter().cloned())
        .collect();
    Ok((
        NormStats::from_rows(&states, min_half_range)?,
        NormStats::from_rows(&actions, min_half_range)?,
    ))
}

/// Cuts every (history, future chunk) window out of the demonstrations.
///
/// Past the end of a demonstration, displacement columns are padded with zero
/// (hold still) and absolute gripper columns repeat their last value.
pub fn build_examples(
    demos: &[Demonstration],
    axes: &[ActionAxis],
    obs_stats: &NormStats,
    action_stats: &NormStats,
    horizon: usize,
    history_len: usize,
) -> Result<Vec<TrainingExample>> {
    validate_demos(demos, axes.len())?;
    let mut out = Vec::new();
    for d in demos {
        let len = d.actions.len();
        for t in 0..len {
            let start = (t + 1).saturating_sub(history_len);
            let obs = Observation::encode(&d.states[start..=t], history_len, obs_stats, None)?;
            let mut chunk = Array2::zeros((horizon, axes.len()));
            for j in 0..horizon {
                let raw: Vec<f64> = if t + j < len {
                    d.actions[t + j].clone()
                } else {
                    axes.iter()
                        .enumerate()
                        .map(|(c, a)| match a {
                            ActionAxis::Gripper => d.actions[len - 1][c],
                            _ => 0.0,
                        })
                        .collect()
                };
                chunk
                    .row_mut(j)
                    .iter_mut()
                    .zip(action_stats.normalize(&raw))
                    .for_each(|(dst, v)| *dst = v);
            }
            out.push(TrainingExample {
                chunk,
                features: obs.features,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub num_examples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub predictor: MlpPredictor,
    pub obs_stats: NormStats,
    pub action_stats: NormStats,
    pub report: TrainReport,
}

/// Fits an [`MlpPredictor`] to the demonstrations with minibatch Adam on the
/// noise-prediction MSE.
pub fn train_mlp_predictor(
    demos: &[Demonstration],
    axes: &[ActionAxis],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainedPredictor> {
    let (obs_stats, action_stats) = dataset_stats(demos, axes.len(), config.min_half_range)?;
    let examples = build_examples(
        demos,
        axes,
        &obs_stats,
        &action_stats,
        config.horizon,
        config.history_len,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut predictor = MlpPredictor::new(
        config.horizon,
        axes.len(),
        examples[0].features.len(),
        &config.hidden,
        config.step_embedding_dim,
        &mut rng,
    );
    let report = fit(&mut predictor, &examples, schedule, config, &mut rng);
    Ok(TrainedPredictor {
        predictor,
        obs_stats,
        action_stats,
        report,
    })
}

fn draw_batch<'a, R: Rng>(
    examples: &'a [TrainingExample],
    idx: &[usize],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Vec<FixedNoise<'a>> {
    idx.iter()
        .map(|&i| {
            let e = &examples[i];
            FixedNoise {
                example: e,
                k: rng.random_range(1..=schedule.num_steps()),
                noise: DdimSampler::initial_noise(e.chunk.nrows(), e.chunk.ncols(), rng).latent,
            }
        })
        .collect()
}

fn fit<R: Rng>(
    predictor: &mut MlpPredictor,
    examples: &[TrainingExample],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut R,
) -> TrainReport {
    let batch_size = config.batch_size.max(1).min(examples.len());
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let probe: Vec<usize> = (0..examples.len()).take(512).collect();
    let probe_batch = draw_batch(examples, &probe, schedule, rng);
    let initial_loss = predictor.loss_and_grad(&probe_batch, schedule).0;

    let mut opt = Adam::new(&predictor.net, config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let progress = epoch as f64 / config.epochs.max(2).saturating_sub(1) as f64;
        let lr = config.final_learning_rate
            + 0.5
                * (config.learning_rate - config.final_learning_rate)
                * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.set_lr(lr);
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(batch_size) {
            let batch = draw_batch(examples, idx, schedule, rng);
            let (loss, grads) = predictor.loss_and_grad(&batch, schedule);
            opt.step(&mut predictor.net, &grads);
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.5} lr {lr:.2e}");
        epoch_losses.push(mean);
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
    TrainReport {
        epoch_losses,
        initial_loss,
        final_loss,
        num_examples: examples.len(),
    }
}

/// Mean of the trailing `window` entries.
pub fn smoothed_tail(losses: &[f64], window: usize) -> Option<f64> {
    if losses.is_empty() {
        return None;
    }
    let w = window.clamp(1, losses.len());
    Some(
        Array1::from(losses[losses.len() - w..].to_vec())
            .mean()
            .unwrap(),
    )
}

/// Draws a fixed batch of noised examples.
pub fn fixed_batch<'a>(
    examples: &'a [TrainingExample],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Vec<FixedNoise<'a>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..examples.len()).collect();
    draw_batch(examples, &idx, schedule, &mut rng)
}
