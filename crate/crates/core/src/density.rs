//! Differentiable log densities consumed by the inference engines.

use crate::error::{Error, Result};
use crate::model::{network_value_and_grad, Dataset, NetworkConfig};

pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `theta`, with its gradient written into `grad`.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let mut grad = vec![0.0; self.dim()];
        self.log_density_and_grad(theta, &mut grad)
    }

    /// Prior mean in the unconstrained space, used by mean initialisation.
    fn prior_mean(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// Network posterior, or the prior alone when no data is attached.
#[derive(Debug, Clone, Copy)]
pub struct BnnPosterior<'a> {
    pub config: &'a NetworkConfig,
    pub data: Option<&'a Dataset>,
}

impl<'a> BnnPosterior<'a> {
    pub fn new(config: &'a NetworkConfig, data: &'a Dataset) -> Self {
        BnnPosterior {
            config,
            data: Some(data),
        }
    }

    pub fn prior(config: &'a NetworkConfig) -> Self {
        BnnPosterior { config, data: None }
    }
}

impl LogDensity for BnnPosterior<'_> {
    fn dim(&self) -> usize {
        self.config.param_count()
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        network_value_and_grad(self.config, theta, self.data, grad)
    }

    /// Zero for weights and biases; `log E[sigma]` of the half-normal noise prior.
    fn prior_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        let v = self.config.noise_prior_scale_sq;
        mean[self.dim() - 1] = (2.0 * v / std::f64::consts::PI).sqrt().ln();
        mean
    }
}

fn check_dim(expected: usize, theta: &[f64], grad: &[f64]) -> Result<()> {
    if theta.len() != expected || grad.len() != expected {
        return Err(Error::DimensionMismatch {
            layer: "target dimension".into(),
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

/// Independent Gaussian `N(mean_i, variance_i)` per coordinate, normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }
}

impl LogDensity for DiagonalGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(self.dim(), theta, grad)?;
        let mut lp = 0.0;
        for i in 0..theta.len() {
            let d = theta[i] - self.mean[i];
            let v = self.variance[i];
            lp += -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * d * d / v;
            grad[i] = -d / v;
        }
        Ok(lp)
    }
}

/// Zero-mean bivariate Gaussian with unit variances and correlation `rho`.
#[derive(Debug, Clone, Copy)]
pub struct CorrelatedGaussian2 {
    pub rho: f64,
}

impl LogDensity for CorrelatedGaussian2 {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(2, theta, grad)?;
        let det = 1.0 - self.rho * self.rho;
        let (a, b) = (theta[0], theta[1]);
        let quad = (a * a - 2.0 * self.rho * a * b + b * b) / det;
        grad[0] = -(a - self.rho * b) / det;
        grad[1] = -(b - self.rho * a) / det;
        Ok(-0.5 * quad)
    }
}

/// Neal's funnel: `v ~ N(0, 9)`, `x_i | v ~ N(0, e^v)`, with `v` stored first.
#[derive(Debug, Clone, Copy)]
pub struct Funnel {
    pub dim: usize,
}

impl LogDensity for Funnel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(self.dim, theta, grad)?;
        let v = theta[0];
        let k = (self.dim - 1) as f64;
        let inv = (-v).exp();
        let sq: f64 = theta[1..].iter().map(|x| x * x).sum();
        let lp = -v * v / 18.0 - 0.5 * k * v - 0.5 * sq * inv;
        grad[0] = -v / 9.0 - 0.5 * k + 0.5 * sq * inv;
        for i in 1..self.dim {
            grad[i] = -theta[i] * inv;
        }
        if !lp.is_finite() {
            return Err(Error::non_finite("funnel log density"));
        }
        Ok(lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(target: &dyn LogDensity, theta: &[f64]) {
        let mut grad = vec![0.0; theta.len()];
        target.log_density_and_grad(theta, &mut grad).unwrap();
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[i] += h;
            m[i] -= h;
            let fd = (target.log_density(&p).unwrap() - target.log_density(&m).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * grad[i].abs().max(1.0));
        }
    }

    #[test]
    fn test_target_gradients() {
        fd_check(&CorrelatedGaussian2 { rho: 0.9 }, &[0.3, -1.2]);
        fd_check(&Funnel { dim: 4 }, &[0.5, 0.1, -0.3, 2.0]);
        fd_check(
            &DiagonalGaussian {
                mean: vec![1.0, -2.0],
                variance: vec![0.5, 3.0],
            },
            &[0.0, 0.7],
        );
    }
}
