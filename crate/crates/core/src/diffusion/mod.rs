//! DDPM noise-prediction training and deterministic DDIM sampling over
//! action chunks.

mod chunk;
mod mlp;
mod predictor;
mod sampler;
mod schedule;
mod train;

pub use chunk::{ActionChunk, Observation};
pub use mlp::{flatten, Adam, Dense, ForwardCache, Mlp};
pub use predictor::{
    analytic_gaussian_predictor, AnalyticGaussianPredictor, NoisePredictor, PointMassPredictor,
    ZeroPredictor,
};
pub use sampler::{
    ddim_step, ddim_transition, forward_noise, noise_prediction_loss, training_loss, DdimSampler,
    NoisedSample,
};
pub use schedule::{BetaSchedule, NoiseSchedule};
pub use train::{
    build_examples, dataset_stats, fixed_batch, smoothed_tail, step_embedding, train_mlp_predictor,
    validate_demos, Demonstration, FixedNoise, MlpPredictor, TrainConfig, TrainReport,
    TrainedPredictor, TrainingExample,
};
