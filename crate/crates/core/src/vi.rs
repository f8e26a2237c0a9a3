//! Mean-field Gaussian variational inference with reparameterised gradients and Adam.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::draws::{DrawSource, PosteriorDraws};
use crate::error::{Error, Result};

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mu.len() != log_std.len() {
            return Err(Error::DimensionMismatch {
                layer: "variational parameters".into(),
                expected: mu.len(),
                got: log_std.len(),
            });
        }
        if mu.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("variational parameter"));
        }
        Ok(VariationalParams { mu, log_std })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    /// Closed-form entropy of the factorised Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().sum::<f64>() + self.dim() as f64 * HALF_LN_2PI_E
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Means drawn uniformly from `[-2, 2]`, ignoring the prior.
    ToFeasible,
    /// Means set to the prior mean.
    ToMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub mc_samples_per_step: usize,
    pub init_mode: InitMode,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub initial_log_std: f64,
    pub record_every: usize,
    pub smoothing_window: usize,
    /// Fraction of final iterations whose iterates are averaged into the returned state.
    pub average_fraction: f64,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            iterations: 10_000,
            learning_rate: 5e-3,
            mc_samples_per_step: 1,
            init_mode: InitMode::ToFeasible,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            initial_log_std: -2.0,
            record_every: 100,
            smoothing_window: 10,
            average_fraction: 0.1,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.mc_samples_per_step == 0 {
            return Err(Error::InvalidConfig(
                "iterations and mc_samples_per_step must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.average_fraction) {
            return Err(Error::InvalidConfig("average_fraction must lie in [0, 1)".into()));
        }
        if self.record_every == 0 || self.smoothing_window == 0 {
            return Err(Error::InvalidConfig("trace intervals must be positive".into()));
        }
        Ok(())
    }
}

fn check_mc(mc_samples: usize) -> Result<()> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    Ok(())
}

/// Monte Carlo estimate of `E_q[log p(theta)] + H(q)`.
pub fn elbo_estimate<R: Rng + ?Sized>(
    target: &dyn LogDensity,
    vparams: &VariationalParams,
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_mc(mc_samples)?;
    let mut theta = vec![0.0; vparams.dim()];
    let mut acc = 0.0;
    for _ in 0..mc_samples {
        for i in 0..theta.len() {
            let eps: f64 = rng.sample(StandardNormal);
            theta[i] = vparams.mu[i] + vparams.log_std[i].exp() * eps;
        }
        acc += target.log_density(&theta)?;
    }
    let value = acc / mc_samples as f64 + vparams.entropy();
    if !value.is_finite() {
        return Err(Error::non_finite("ELBO estimate"));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    /// ELBO estimate from the same draws.
    pub elbo: f64,
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Reparameterised gradient, `theta = mu + exp(log_std) * eps`.
pub fn grad_elbo<R: Rng + ?Sized>(
    target: &dyn LogDensity,
    vparams: &VariationalParams,
    mc_samples: usize,
    rng: &mut R,
) -> Result<ElboGradient> {
    check_mc(mc_samples)?;
    let d = vparams.dim();
    let std = vparams.std();
    let mut eps = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut out = ElboGradient {
        elbo: 0.0,
        mu: vec![0.0; d],
        log_std: vec![0.0; d],
    };
    for _ in 0..mc_samples {
        for i in 0..d {
            eps[i] = rng.sample(StandardNormal);
            theta[i] = vparams.mu[i] + std[i] * eps[i];
        }
        out.elbo += target.log_density_and_grad(&theta, &mut g)?;
        for i in 0..d {
            out.mu[i] += g[i];
            out.log_std[i] += g[i] * eps[i] * std[i];
        }
    }
    let scale = 1.0 / mc_samples as f64;
    out.elbo = out.elbo * scale + vparams.entropy();
    out.mu.iter_mut().for_each(|v| *v *= scale);
    // the entropy contributes d/d(log_std) = 1 per coordinate
    out.log_std.iter_mut().for_each(|v| *v = *v * scale + 1.0);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub elbo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdviFit {
    pub params: VariationalParams,
    /// Smoothed ELBO, one entry per recording interval.
    pub trace: Vec<TracePoint>,
    pub final_elbo: f64,
    pub elapsed_s: f64,
}

/// Initial variational state for the configured mode.
pub fn initial_params<R: Rng + ?Sized>(
    target: &dyn LogDensity,
    config: &ViConfig,
    rng: &mut R,
) -> Result<VariationalParams> {
    let d = target.dim();
    let mu = match config.init_mode {
        InitMode::ToMean => target.prior_mean(),
        InitMode::ToFeasible => {
            let mut found = None;
            for _ in 0..100 {
                let candidate: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
                if target.log_density(&candidate).map_or(false, f64::is_finite) {
                    found = Some(candidate);
                    break;
                }
            }
            found.ok_or(Error::InitializationFailed { attempts: 100 })?
        }
    };
    VariationalParams::new(mu, vec![config.initial_log_std; d])
}

/// Runs `iterations` Adam ascent steps on the ELBO.
pub fn fit_advi(target: &dyn LogDensity, config: &ViConfig) -> Result<AdviFit> {
    config.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = initial_params(target, config, &mut rng)?;
    let d = params.dim();

    let mut m = vec![0.0; 2 * d];
    let mut v = vec![0.0; 2 * d];
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let mut recent = std::collections::VecDeque::with_capacity(config.smoothing_window);
    let mut trace = Vec::with_capacity(config.iterations / config.record_every + 1);
    let averaged = (config.average_fraction * config.iterations as f64).floor() as usize;
    let average_from = config.iterations - averaged + 1;
    let mut avg = VariationalParams {
        mu: vec![0.0; d],
        log_std: vec![0.0; d],
    };

    for it in 1..=config.iterations {
        let grad = grad_elbo(target, &params, config.mc_samples_per_step, &mut rng)
            .map_err(|e| if e.is_numeric() { Error::Diverged { iteration: it } } else { e })?;
        if !grad.elbo.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        if recent.len() == config.smoothing_window {
            recent.pop_front();
        }
        recent.push_back(grad.elbo);

        let bc1 = 1.0 - b1.powi(it as i32);
        let bc2 = 1.0 - b2.powi(it as i32);
        let step = |i: usize, g: f64, m: &mut [f64], v: &mut [f64]| {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            config.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + config.adam_eps)
        };
        for i in 0..d {
            params.mu[i] += step(i, grad.mu[i], &mut m, &mut v);
            params.log_std[i] += step(d + i, grad.log_std[i], &mut m, &mut v);
        }
        if params.mu.iter().chain(&params.log_std).any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        if averaged > 0 && it >= average_from {
            for i in 0..d {
                avg.mu[i] += params.mu[i] / averaged as f64;
                avg.log_std[i] += params.log_std[i] / averaged as f64;
            }
        }
        if it % config.record_every == 0 {
            trace.push(TracePoint {
                iteration: it,
                elbo: recent.iter().sum::<f64>() / recent.len() as f64,
            });
        }
    }

    let final_elbo = recent.iter().sum::<f64>() / recent.len() as f64;
    if averaged > 0 {
        params = avg;
    }
    Ok(AdviFit {
        params,
        trace,
        final_elbo,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// `S` independent draws `mu + exp(log_std) * eps`.
pub fn sample_variational<R: Rng + ?Sized>(
    vparams: &VariationalParams,
    num_draws: usize,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    let d = vparams.dim();
    let std = vparams.std();
    let mut draws = Array2::zeros((num_draws, d));
    for mut row in draws.outer_iter_mut() {
        for (i, v) in row.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            *v = vparams.mu[i] + std[i] * eps;
        }
    }
    PosteriorDraws::new(draws, DrawSource::Vi)
}
