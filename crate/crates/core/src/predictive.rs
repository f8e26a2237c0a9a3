//! Posterior predictive draws and the evaluation metrics computed from them.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::LogLikMatrix;
use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::model::{forward_values, pointwise_log_lik_values, Dataset, NetworkConfig};
use crate::stats::{neumaier_sum, quantile_sorted, sort_floats};

/// Fewest draws for which 2.5% / 97.5% quantiles are considered usable.
pub const MIN_COVERAGE_DRAWS: usize = 40;

/// Signal and observation draws at `x_new`.
///
/// Columns index `point * output_dim + output`, so single-output models have
/// one column per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSamples {
    pub mu_samples: Array2<f64>,
    pub y_samples: Array2<f64>,
    pub x_new: Array2<f64>,
    pub output_dim: usize,
}

impl PredictiveSamples {
    pub fn new(mu_samples: Array2<f64>, y_samples: Array2<f64>, x_new: Array2<f64>, output_dim: usize) -> Result<Self> {
        if mu_samples.dim() != y_samples.dim() {
            return Err(Error::InvalidArgument(format!(
                "signal draws {:?} and observation draws {:?} differ in shape",
                mu_samples.dim(),
                y_samples.dim()
            )));
        }
        if output_dim == 0 || mu_samples.ncols() != x_new.nrows() * output_dim {
            return Err(Error::DimensionMismatch {
                layer: "predictive columns".into(),
                expected: x_new.nrows() * output_dim,
                got: mu_samples.ncols(),
            });
        }
        Ok(PredictiveSamples {
            mu_samples,
            y_samples,
            x_new,
            output_dim,
        })
    }

    pub fn num_draws(&self) -> usize {
        self.mu_samples.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.x_new.nrows()
    }

    /// Mean observation draw per column.
    pub fn predictive_mean(&self) -> Vec<f64> {
        column_means(&self.y_samples)
    }
}

fn column_means(samples: &Array2<f64>) -> Vec<f64> {
    let s = samples.nrows() as f64;
    samples
        .axis_iter(Axis(1))
        .map(|c| neumaier_sum(c.iter().copied()) / s)
        .collect()
}

/// `mu_s = f(theta_s, x_new)` and `y_s = mu_s + sigma_s * eps` for every draw.
pub fn posterior_predictive<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    config: &NetworkConfig,
    x_new: &Array2<f64>,
    rng: &mut R,
) -> Result<PredictiveSamples> {
    if draws.num_params() != config.param_count() {
        return Err(Error::DimensionMismatch {
            layer: "posterior draws".into(),
            expected: config.param_count(),
            got: draws.num_params(),
        });
    }
    let s = draws.num_draws();
    let cols = x_new.nrows() * config.output_dim;
    // forward passes are independent per draw; noise is drawn afterwards in a fixed order
    let signals: Vec<Array2<f64>> = (0..s)
        .into_par_iter()
        .map(|i| forward_values(config, draws.row(i), x_new.view()))
        .collect::<Result<_>>()?;
    let mut mu_samples = Array2::zeros((s, cols));
    let mut y_samples = Array2::zeros((s, cols));
    for (i, mu) in signals.iter().enumerate() {
        let sigma = draws.row(i)[config.param_count() - 1].exp();
        for (j, &m) in mu.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            mu_samples[[i, j]] = m;
            y_samples[[i, j]] = m + sigma * eps;
        }
    }
    PredictiveSamples::new(mu_samples, y_samples, x_new.clone(), config.output_dim)
}

fn flat_truth(y_true: &Array2<f64>, cols: usize) -> Result<Vec<f64>> {
    if y_true.len() != cols {
        return Err(Error::DimensionMismatch {
            layer: "evaluation targets".into(),
            expected: cols,
            got: y_true.len(),
        });
    }
    Ok(y_true.iter().copied().collect())
}

/// Root mean squared error of the predictive mean.
pub fn rmse(pred: &PredictiveSamples, y_true: &Array2<f64>) -> Result<f64> {
    let truth = flat_truth(y_true, pred.y_samples.ncols())?;
    let mean = pred.predictive_mean();
    let sq = neumaier_sum(truth.iter().zip(&mean).map(|(t, m)| (t - m) * (t - m)));
    Ok((sq / truth.len() as f64).sqrt())
}

/// Fraction of targets inside the central `level` interval of the matching sample column.
pub fn empirical_coverage(samples: &Array2<f64>, y_true: &Array2<f64>, level: f64) -> Result<f64> {
    if samples.nrows() < MIN_COVERAGE_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "coverage needs at least {MIN_COVERAGE_DRAWS} draws, got {}",
            samples.nrows()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("coverage level {level} outside (0, 1)")));
    }
    let truth = flat_truth(y_true, samples.ncols())?;
    let lo_p = (1.0 - level) / 2.0;
    let hi_p = 1.0 - lo_p;
    let inside = samples
        .axis_iter(Axis(1))
        .zip(&truth)
        .filter(|(col, t)| {
            let mut v = col.to_vec();
            sort_floats(&mut v);
            let (lo, hi) = (quantile_sorted(&v, lo_p), quantile_sorted(&v, hi_p));
            lo <= **t && **t <= hi
        })
        .count();
    Ok(inside as f64 / truth.len() as f64)
}

/// Signal and observation coverage at the 95% level.
pub fn coverage_pair(pred: &PredictiveSamples, y_true: &Array2<f64>) -> Result<(f64, f64)> {
    Ok((
        empirical_coverage(&pred.mu_samples, y_true, 0.95)?,
        empirical_coverage(&pred.y_samples, y_true, 0.95)?,
    ))
}

/// `N x S` matrix of per-point Gaussian log-likelihoods.
pub fn pointwise_log_lik(
    draws: &PosteriorDraws,
    config: &NetworkConfig,
    data: &Dataset,
    model_id: &str,
) -> Result<LogLikMatrix> {
    let columns: Vec<Vec<f64>> = (0..draws.num_draws())
        .into_par_iter()
        .map(|s| pointwise_log_lik_values(config, draws.row(s), data))
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((data.len(), draws.num_draws()));
    for (s, col) in columns.iter().enumerate() {
        values.column_mut(s).assign(&ArrayView1::from(col.as_slice()));
    }
    LogLikMatrix::new(values, model_id)
}

/// Density curves on a shared grid for posterior predictive checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurves {
    pub grid: Vec<f64>,
    pub replicates: Vec<Vec<f64>>,
    pub observed: Vec<f64>,
}

/// Most replicate curves drawn in a predictive check.
pub const MAX_KDE_REPLICATES: usize = 50;

/// Silverman's rule of thumb, with the usual fallbacks for zero spread.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut v = xs.to_vec();
    sort_floats(&mut v);
    let sd = if xs.len() > 1 { crate::stats::sample_variance(xs).sqrt() } else { 0.0 };
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let mut spread = sd.min(iqr / 1.34);
    if spread <= 0.0 {
        spread = if sd > 0.0 {
            sd
        } else if v[0] != 0.0 {
            v[0].abs()
        } else {
            1.0
        };
    }
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate of `xs` evaluated at every grid point.
pub fn gaussian_kde(xs: &[f64], grid: &[f64]) -> Vec<f64> {
    let h = silverman_bandwidth(xs);
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|g| {
            norm * neumaier_sum(xs.iter().map(|x| {
                let u = (g - x) / h;
                (-0.5 * u * u).exp()
            }))
        })
        .collect()
}

/// KDE of the observed targets and of up to [`MAX_KDE_REPLICATES`] replicate draws.
pub fn ppc_kde(y_samples: &Array2<f64>, y_obs: &[f64], grid: &[f64]) -> Result<KdeCurves> {
    if y_obs.is_empty() || grid.is_empty() {
        return Err(Error::InvalidArgument("predictive check needs data and a grid".into()));
    }
    if y_samples.ncols() != y_obs.len() {
        return Err(Error::DimensionMismatch {
            layer: "replicate columns".into(),
            expected: y_obs.len(),
            got: y_samples.ncols(),
        });
    }
    let replicates = y_samples
        .outer_iter()
        .take(MAX_KDE_REPLICATES)
        .map(|row| gaussian_kde(&row.to_vec(), grid))
        .collect();
    Ok(KdeCurves {
        grid: grid.to_vec(),
        replicates,
        observed: gaussian_kde(y_obs, grid),
    })
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub method: String,
    pub width: usize,
    pub depth: usize,
    pub prior: String,
    pub rmse: f64,
    pub ec_signal: f64,
    pub ec_obs: f64,
    pub tt_seconds: f64,
    /// Mean log predictive density on the evaluation set.
    pub mlpd: f64,
}

/// Average over points of `log (1/S) sum_s N(y_n | mu_sn, sigma_s^2)`.
pub fn mean_log_predictive_density(loglik: &LogLikMatrix) -> f64 {
    let s = loglik.values.ncols() as f64;
    let per_point: Vec<f64> = loglik
        .values
        .outer_iter()
        .map(|row| crate::stats::log_sum_exp(&row.to_vec()) - s.ln())
        .collect();
    neumaier_sum(per_point.iter().copied()) / per_point.len() as f64
}
