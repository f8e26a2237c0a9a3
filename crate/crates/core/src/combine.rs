//! Weighting and mixing of several fitted posteriors.

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assess::{ElpdResult, LogLikMatrix};
use crate::draws::DrawSource;
use crate::error::{Error, Result};
use crate::predictive::PredictiveSamples;
use crate::stats::{log_sum_exp, neumaier_sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CombineMethod {
    #[serde(rename = "DE")]
    DeepEnsemble,
    #[serde(rename = "pBMA")]
    PseudoBma,
    #[serde(rename = "stack")]
    Stacking,
}

impl CombineMethod {
    pub const ALL: [CombineMethod; 3] = [CombineMethod::DeepEnsemble, CombineMethod::PseudoBma, CombineMethod::Stacking];

    pub fn label(self) -> &'static str {
        match self {
            CombineMethod::DeepEnsemble => "DE",
            CombineMethod::PseudoBma => "pBMA",
            CombineMethod::Stacking => "stack",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "DE" => Ok(CombineMethod::DeepEnsemble),
            "pBMA" => Ok(CombineMethod::PseudoBma),
            "stack" => Ok(CombineMethod::Stacking),
            other => Err(Error::InvalidConfig(format!(
                "unknown combination method `{other}` (expected DE, pBMA or stack)"
            ))),
        }
    }
}

/// Point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
}

impl WeightVector {
    /// Checks non-negativity and unit sum to 1e-12.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let s = neumaier_sum(w.iter().copied());
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {s}, not 1")));
        }
        Ok(WeightVector { w })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Normalized softmax of `logits`.
    fn softmax(logits: &[f64]) -> Self {
        let lse = log_sum_exp(logits);
        let mut w: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        let s: f64 = neumaier_sum(w.iter().copied());
        w.iter_mut().for_each(|v| *v /= s);
        WeightVector { w }
    }
}

pub fn ensemble_weights(k: usize) -> Result<WeightVector> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one member".into()));
    }
    Ok(WeightVector {
        w: vec![1.0 / k as f64; k],
    })
}

/// Regularized elpd used by pseudo-BMA:
/// `elpd - 0.5 * sqrt(sum_n (elpd_n - elpd / N)^2)`.
pub fn regularized_elpd(e: &ElpdResult) -> f64 {
    let n = e.pointwise.len() as f64;
    let centre = e.total / n;
    let ss = neumaier_sum(e.pointwise.iter().map(|v| (v - centre) * (v - centre)));
    e.total - 0.5 * ss.sqrt()
}

pub fn pseudo_bma_weights(elpds: &[ElpdResult]) -> Result<WeightVector> {
    let first = elpds
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one elpd result".into()))?;
    if let Some(bad) = elpds.iter().find(|e| e.num_points() != first.num_points()) {
        return Err(Error::DimensionMismatch {
            layer: format!("elpd of model {}", bad.model_id),
            expected: first.num_points(),
            got: bad.num_points(),
        });
    }
    let logits: Vec<f64> = elpds.iter().map(regularized_elpd).collect();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("regularized elpd"));
    }
    Ok(WeightVector::softmax(&logits))
}

/// `(1/N) sum_n log sum_k w_k exp(log_dens[n, k])`.
pub fn stacking_objective(log_densities: &Array2<f64>, w: &[f64]) -> f64 {
    let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let per_point: Vec<f64> = log_densities
        .outer_iter()
        .map(|row| {
            let terms: Vec<f64> = row.iter().zip(&log_w).map(|(l, lw)| l + lw).collect();
            log_sum_exp(&terms)
        })
        .collect();
    neumaier_sum(per_point.iter().copied()) / per_point.len() as f64
}

/// Stacking weights from an `N x K` matrix of LOO predictive densities.
pub fn stacking_weights(loo_densities: &Array2<f64>) -> Result<WeightVector> {
    if loo_densities.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::InvalidArgument("LOO densities must be finite and positive".into()));
    }
    stacking_weights_log(&loo_densities.mapv(f64::ln))
}

/// Stacking weights from log densities (`elpd_loo,n` per model in columns).
///
/// Softmax logits start at zero and move along `log g_k`, where `g_k` is the
/// objective's derivative in `w_k`. That direction is the softmax gradient
/// rescaled by `1 / w_k`, so weights heading to zero do not stall; a unit step
/// is exactly one EM update for mixture weights. The step doubles after an
/// accepted move and halves after a rejected one.
pub fn stacking_weights_log(log_densities: &Array2<f64>) -> Result<WeightVector> {
    let (n, k) = log_densities.dim();
    if n == 0 || k == 0 {
        return Err(Error::InvalidArgument("stacking needs at least one point and one model".into()));
    }
    if log_densities.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("log LOO density"));
    }
    if k == 1 {
        return Ok(WeightVector { w: vec![1.0] });
    }
    const WINDOW: usize = 50;
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 200_000;

    let mut logits = vec![0.0; k];
    let mut w = WeightVector::softmax(&logits).w;
    let mut value = stacking_objective(log_densities, &w);
    let mut history = vec![value];
    let mut step = 1.0;
    for _ in 0..MAX_ITER {
        // d objective / d w_k, then chain rule through the softmax
        let mut g = vec![0.0; k];
        for row in log_densities.outer_iter() {
            let terms: Vec<f64> = row.iter().zip(&w).map(|(l, wk)| l + wk.ln()).collect();
            let lse = log_sum_exp(&terms);
            for j in 0..k {
                g[j] += (row[j] - lse).exp() / n as f64;
            }
        }
        let dot: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        if w.iter().zip(&g).all(|(wk, gk)| (wk * (gk - dot)).abs() < 1e-15) {
            break;
        }
        // zero weights have g_k > 0 in general; clamp so dead models stay finite
        let grad: Vec<f64> = g.iter().map(|gk| (gk / dot).max(1e-300).ln()).collect();
        loop {
            let trial: Vec<f64> = logits.iter().zip(&grad).map(|(l, d)| l + step * d).collect();
            let tw = WeightVector::softmax(&trial).w;
            let tv = stacking_objective(log_densities, &tw);
            if tv >= value {
                logits = trial;
                w = tw;
                value = tv;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                break;
            }
        }
        history.push(value);
        if history.len() > WINDOW && value - history[history.len() - 1 - WINDOW] < TOL {
            break;
        }
        if step < 1e-300 {
            break;
        }
    }
    Ok(WeightVector { w })
}

/// One fitted posterior available for combination.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub model_id: String,
    pub source: DrawSource,
    pub predictive: PredictiveSamples,
    pub loglik: LogLikMatrix,
    pub elpd: ElpdResult,
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    members: Vec<Candidate>,
}

impl CandidateSet {
    /// Members must share the inference engine, the training size and the prediction inputs.
    pub fn new(members: Vec<Candidate>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidArgument("candidate set is empty".into()))?;
        for m in &members[1..] {
            if m.source != first.source {
                return Err(Error::InvalidArgument(format!(
                    "cannot combine {:?} candidate `{}` with {:?} candidate `{}`",
                    m.source, m.model_id, first.source, first.model_id
                )));
            }
            if m.elpd.num_points() != first.elpd.num_points() || m.loglik.num_points() != first.loglik.num_points() {
                return Err(Error::DimensionMismatch {
                    layer: format!("training points of `{}`", m.model_id),
                    expected: first.elpd.num_points(),
                    got: m.elpd.num_points(),
                });
            }
            if m.predictive.x_new != first.predictive.x_new || m.predictive.output_dim != first.predictive.output_dim {
                return Err(Error::InvalidArgument(format!(
                    "candidate `{}` predicts at different inputs",
                    m.model_id
                )));
            }
        }
        Ok(CandidateSet { members })
    }

    pub fn members(&self) -> &[Candidate] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `N x K` matrix of pointwise `elpd_loo,n`.
    pub fn loo_log_densities(&self) -> Array2<f64> {
        let n = self.members[0].elpd.num_points();
        Array2::from_shape_fn((n, self.len()), |(i, k)| self.members[k].elpd.pointwise[i])
    }

    pub fn weights(&self, method: CombineMethod) -> Result<WeightVector> {
        match method {
            CombineMethod::DeepEnsemble => ensemble_weights(self.len()),
            CombineMethod::PseudoBma => {
                let elpds: Vec<ElpdResult> = self.members.iter().map(|m| m.elpd.clone()).collect();
                pseudo_bma_weights(&elpds)
            }
            CombineMethod::Stacking => stacking_weights_log(&self.loo_log_densities()),
        }
    }
}

/// Draws from the weighted mixture of the members' stored predictive draws.
pub fn combine_predictive<R: Rng + ?Sized>(
    set: &CandidateSet,
    w: &WeightVector,
    s_out: usize,
    rng: &mut R,
) -> Result<PredictiveSamples> {
    if w.len() != set.len() {
        return Err(Error::DimensionMismatch {
            layer: "weights".into(),
            expected: set.len(),
            got: w.len(),
        });
    }
    if s_out == 0 {
        return Err(Error::InvalidArgument("need at least one output draw".into()));
    }
    let pick = WeightedIndex::new(&w.w).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let first = &set.members[0].predictive;
    let cols = first.mu_samples.ncols();
    let mut mu = Array2::zeros((s_out, cols));
    let mut y = Array2::zeros((s_out, cols));
    for s in 0..s_out {
        let k = pick.sample(rng);
        let member = &set.members[k].predictive;
        let j = rng.gen_range(0..member.num_draws());
        mu.row_mut(s).assign(&member.mu_samples.row(j));
        y.row_mut(s).assign(&member.y_samples.row(j));
    }
    PredictiveSamples::new(mu, y, first.x_new.clone(), first.output_dim)
}

/// Mean and variance of a finite mixture from its component moments.
pub fn mixture_moments(means: &[f64], vars: &[f64], w: &WeightVector) -> Result<(f64, f64)> {
    if means.len() != w.len() || vars.len() != w.len() {
        return Err(Error::DimensionMismatch {
            layer: "mixture components".into(),
            expected: w.len(),
            got: means.len().min(vars.len()),
        });
    }
    let mu = neumaier_sum(w.w.iter().zip(means).map(|(a, m)| a * m));
    let second = neumaier_sum(w.w.iter().zip(means.iter().zip(vars)).map(|(a, (m, v))| a * (v + m * m)));
    Ok((mu, second - mu * mu))
}

/// Per-point `log sum_k w_k (1/S_k) sum_s p(y_n | theta_ks)` for held-out data.
pub fn mixture_log_predictive_density(logliks: &[&LogLikMatrix], w: &WeightVector) -> Result<Vec<f64>> {
    if logliks.len() != w.len() || logliks.is_empty() {
        return Err(Error::DimensionMismatch {
            layer: "mixture members".into(),
            expected: w.len(),
            got: logliks.len(),
        });
    }
    let n = logliks[0].num_points();
    if logliks.iter().any(|m| m.num_points() != n) {
        return Err(Error::InvalidArgument("members evaluated on different point sets".into()));
    }
    let per_member: Vec<Vec<f64>> = logliks.iter().map(|m| crate::assess::lpd_pointwise(m)).collect();
    Ok((0..n)
        .map(|i| {
            let terms: Vec<f64> = per_member
                .iter()
                .zip(&w.w)
                .filter(|(_, wk)| **wk > 0.0)
                .map(|(lp, wk)| lp[i] + wk.ln())
                .collect();
            log_sum_exp(&terms)
        })
        .collect())
}
