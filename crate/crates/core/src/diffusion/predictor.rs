use ndarray::{Array1, Array2, Axis};

use super::chunk::Observation;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Predicts the noise component of a noised chunk at diffusion step `k`.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, latent: &Array2<f64>, obs: &Observation, k: usize) -> Array2<f64>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for std::sync::Arc<P> {
    fn predict(&self, latent: &Array2<f64>, obs: &Observation, k: usize) -> Array2<f64> {
        (**self).predict(latent, obs, k)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(&self, latent: &Array2<f64>, obs: &Observation, k: usize) -> Array2<f64> {
        (**self).predict(latent, obs, k)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, latent: &Array2<f64>, _: &Observation, _: usize) -> Array2<f64> {
        Array2::zeros(latent.dim())
    }
}

/// Posterior-mean noise estimate `E[eps | x_k]` for data drawn independently
/// per element from `N(mean[d], var[d])`, with `d` the action column.
///
/// With `y = x - sqrt(ab) * mean` and `v = ab * var + 1 - ab`, the estimate
/// is `sqrt(1 - ab) * y / v`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianPredictor {
    mean: Array1<f64>,
    var: Array1<f64>,
    schedule: NoiseSchedule,
}

pub fn analytic_gaussian_predictor(
    mean: &[f64],
    cov_diag: &[f64],
    schedule: &NoiseSchedule,
) -> Result<AnalyticGaussianPredictor> {
    if mean.len() != cov_diag.len() {
        return Err(Error::ShapeMismatch {
            expected: (1, mean.len()),
            found: (1, cov_diag.len()),
        });
    }
    if cov_diag.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::InvalidConfig(
            "Gaussian covariance must be > 0".into(),
        ));
    }
    Ok(AnalyticGaussianPredictor {
        mean: Array1::from(mean.to_vec()),
        var: Array1::from(cov_diag.to_vec()),
        schedule: schedule.clone(),
    })
}

impl AnalyticGaussianPredictor {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn var(&self) -> &Array1<f64> {
        &self.var
    }
}

impl NoisePredictor for AnalyticGaussianPredictor {
    fn predict(&self, latent: &Array2<f64>, _: &Observation, k: usize) -> Array2<f64> {
        let ab = self.schedule.alpha_bar(k);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = latent.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for ((x, m), v) in row.iter_mut().zip(&self.mean).zip(&self.var) {
                *x = sn * (*x - sa * m) / (ab * v + 1.0 - ab);
            }
        }
        out
    }
}

type TargetFn = dyn Fn(&Observation) -> Array2<f64> + Send + Sync;

/// Exact denoiser for data concentrated on one chunk per observation.
///
/// Given `target(obs)`, returns the noise that explains `x_k` as a noised copy
/// of that chunk, so DDIM reproduces `target(obs)` exactly. Used to drive the
/// pipeline with scripted policies.
pub struct PointMassPredictor {
    target: Box<TargetFn>,
    schedule: NoiseSchedule,
}

impl PointMassPredictor {
    pub fn new<F>(schedule: &NoiseSchedule, target: F) -> Self
    where
        F: Fn(&Observation) -> Array2<f64> + Send + Sync + 'static,
    {
        Self {
            target: Box::new(target),
            schedule: schedule.clone(),
        }
    }
}

impl NoisePredictor for PointMassPredictor {
    fn predict(&self, latent: &Array2<f64>, obs: &Observation, k: usize) -> Array2<f64> {
        let ab = self.schedule.alpha_bar(k);
        let x0 = (self.target)(obs);
        (latent - &(x0 * ab.sqrt())) / (1.0 - ab).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_zero_point() {
        let s = NoiseSchedule::default();
        let p = analytic_gaussian_predictor(&[0.0], &[1.0], &s).unwrap();
        let x = Array2::zeros((3, 1));
        for k in 1..=s.num_steps() {
            assert!(p
                .predict(&x, &Observation::empty(), k)
                .iter()
                .all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rejects_nonpositive_cov() {
        let s = NoiseSchedule::default();
        assert!(analytic_gaussian_predictor(&[0.0], &[0.0], &s).is_err());
        assert!(analytic_gaussian_predictor(&[0.0, 1.0], &[1.0], &s).is_err());
    }
}
