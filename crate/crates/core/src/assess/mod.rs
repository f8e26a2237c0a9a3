//! Leave-one-out and WAIC estimates of expected log predictive density.

mod psis;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, NetworkConfig};
use crate::predictive::pointwise_log_lik;
use crate::recipe::{fit_posterior, InferenceRecipe};
use crate::stats::{log_sum_exp, neumaier_sum, sample_variance};

pub use psis::{fit_generalized_pareto, gpd_quantile, psis_smooth, tail_length, GpdFit, MIN_DRAWS, MIN_TAIL};

/// Shape estimate above which a LOO term is considered unstable.
pub const KHAT_WARN: f64 = 0.7;
/// Shape estimate above which a LOO term is considered unusable.
pub const KHAT_UNRELIABLE: f64 = 1.0;

/// `N x S` per-point log-likelihoods of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikMatrix {
    pub values: Array2<f64>,
    pub model_id: String,
}

impl LogLikMatrix {
    pub fn new(values: Array2<f64>, model_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("log-likelihood matrix is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("pointwise log-likelihood"));
        }
        Ok(LogLikMatrix {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn num_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_draws(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElpdMethod {
    PsisLoo,
    Waic,
}

/// How the WAIC penalty is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaicPenalty {
    /// Variance over draws of `log p(y_n | theta_s)`.
    #[default]
    LogDensityVariance,
    /// Variance over draws of `p(y_n | theta_s)` without the logarithm.
    DensityVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdResult {
    pub model_id: String,
    pub method: ElpdMethod,
    pub total: f64,
    pub se: f64,
    pub pointwise: Vec<f64>,
    /// Pareto shape per point; empty for WAIC. Unfittable tails are `null` in JSON.
    #[serde(with = "nonfinite_as_null")]
    pub khat: Vec<f64>,
    /// Effective number of parameters.
    pub p_eff: f64,
}

impl ElpdResult {
    fn from_pointwise(model_id: &str, method: ElpdMethod, pointwise: Vec<f64>, khat: Vec<f64>, p_eff: f64) -> Self {
        let n = pointwise.len() as f64;
        let se = if pointwise.len() > 1 {
            (n * sample_variance(&pointwise)).sqrt()
        } else {
            0.0
        };
        ElpdResult {
            model_id: model_id.to_string(),
            method,
            total: neumaier_sum(pointwise.iter().copied()),
            se,
            pointwise,
            khat,
            p_eff,
        }
    }

    pub fn num_points(&self) -> usize {
        self.pointwise.len()
    }

    /// Points whose shape estimate exceeds [`KHAT_WARN`].
    pub fn warn_points(&self) -> Vec<usize> {
        (0..self.khat.len()).filter(|&i| self.khat[i] > KHAT_WARN).collect()
    }

    /// Points whose shape estimate exceeds [`KHAT_UNRELIABLE`].
    pub fn unreliable_points(&self) -> Vec<usize> {
        (0..self.khat.len()).filter(|&i| self.khat[i] > KHAT_UNRELIABLE).collect()
    }
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

/// PSIS-LOO: per point, importance weights `1 / p(y_n | theta_s)` are smoothed
/// and `elpd_n = log sum_s w_s p(y_n | theta_s) - log sum_s w_s`.
pub fn elpd_loo(loglik: &LogLikMatrix) -> Result<ElpdResult> {
    let rows: Vec<(f64, f64)> = (0..loglik.num_points())
        .into_par_iter()
        .map(|n| {
            let ll = loglik.values.row(n).to_vec();
            let neg: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k) = psis_smooth(&neg)?;
            let num: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
            Ok((log_sum_exp(&num) - log_sum_exp(&lw), k))
        })
        .collect::<Result<_>>()?;
    let (pointwise, khat): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let lpd = lpd_pointwise(loglik);
    let p_eff = neumaier_sum(lpd.iter().zip(&pointwise).map(|(a, b)| a - b));
    Ok(ElpdResult::from_pointwise(
        &loglik.model_id,
        ElpdMethod::PsisLoo,
        pointwise,
        khat,
        p_eff,
    ))
}

/// `log (1/S) sum_s p(y_n | theta_s)` per point.
pub fn lpd_pointwise(loglik: &LogLikMatrix) -> Vec<f64> {
    let ln_s = (loglik.num_draws() as f64).ln();
    loglik
        .values
        .outer_iter()
        .map(|row| log_sum_exp(&row.to_vec()) - ln_s)
        .collect()
}

/// WAIC on the elpd scale: `lpd_n - penalty_n`.
pub fn elpd_waic(loglik: &LogLikMatrix, penalty: WaicPenalty) -> Result<ElpdResult> {
    if loglik.num_draws() < 2 {
        return Err(Error::InvalidArgument("WAIC needs at least two draws".into()));
    }
    let lpd = lpd_pointwise(loglik);
    let penalties: Vec<f64> = loglik
        .values
        .outer_iter()
        .map(|row| {
            let ll = row.to_vec();
            match penalty {
                WaicPenalty::LogDensityVariance => sample_variance(&ll),
                WaicPenalty::DensityVariance => sample_variance(&ll.iter().map(|v| v.exp()).collect::<Vec<_>>()),
            }
        })
        .collect();
    let pointwise: Vec<f64> = lpd.iter().zip(&penalties).map(|(a, p)| a - p).collect();
    Ok(ElpdResult::from_pointwise(
        &loglik.model_id,
        ElpdMethod::Waic,
        pointwise,
        Vec::new(),
        neumaier_sum(penalties),
    ))
}

/// Exact leave-one-out by refitting: for each point, `fit_and_score(train, held_out)`
/// returns `log p(y_n | theta_s)` for fresh draws from the posterior given `train`.
pub fn brute_force_loo_with<F>(data: &Dataset, fit_and_score: F) -> Result<Vec<f64>>
where
    F: Fn(&Dataset, &Dataset) -> Result<Vec<f64>> + Sync,
{
    if data.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two points".into()));
    }
    (0..data.len())
        .into_par_iter()
        .map(|n| {
            let train = data.without_row(n)?;
            let held_out = data.select(&[n])?;
            let ll = fit_and_score(&train, &held_out)?;
            if ll.is_empty() {
                return Err(Error::InvalidArgument("refit produced no draws".into()));
            }
            Ok(log_sum_exp(&ll) - (ll.len() as f64).ln())
        })
        .collect()
}

/// Exact leave-one-out for the network, refitting with `recipe` (same seed for every refit).
pub fn brute_force_loo(model: &NetworkConfig, data: &Dataset, recipe: &InferenceRecipe) -> Result<Vec<f64>> {
    brute_force_loo_with(data, |train, held_out| {
        let draws = fit_posterior(model, train, recipe)?;
        let ll = pointwise_log_lik(&draws, model, held_out, "refit")?;
        Ok(ll.values.row(0).to_vec())
    })
}
