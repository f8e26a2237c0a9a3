#![allow(dead_code)]

use bnn_core::assess::LogLikMatrix;
use bnn_core::model::Dataset;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

/// `y_n ~ N(theta, noise_var)`, `theta ~ N(0, prior_var)`.
#[derive(Debug, Clone, Copy)]
pub struct ConjugateNormal {
    pub prior_var: f64,
    pub noise_var: f64,
}

impl ConjugateNormal {
    pub fn posterior(&self, y: &[f64]) -> (f64, f64) {
        let precision = 1.0 / self.prior_var + y.len() as f64 / self.noise_var;
        let var = 1.0 / precision;
        (var * y.iter().sum::<f64>() / self.noise_var, var)
    }

    pub fn posterior_draws(&self, y: &[f64], s: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (m, v) = self.posterior(y);
        (0..s).map(|_| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    pub fn log_lik(&self, y: f64, theta: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.noise_var).ln() - 0.5 * (y - theta).powi(2) / self.noise_var
    }

    /// Closed-form `log p(y_n | y_-n)`.
    pub fn exact_loo(&self, y: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|n| {
                let rest: Vec<f64> = y.iter().enumerate().filter(|(i, _)| *i != n).map(|(_, v)| *v).collect();
                let (m, v) = self.posterior(&rest);
                let pv = v + self.noise_var;
                -0.5 * (2.0 * std::f64::consts::PI * pv).ln() - 0.5 * (y[n] - m).powi(2) / pv
            })
            .collect()
    }

    pub fn loglik_matrix(&self, y: &[f64], draws: &[f64]) -> LogLikMatrix {
        let v = Array2::from_shape_fn((y.len(), draws.len()), |(n, s)| self.log_lik(y[n], draws[s]));
        LogLikMatrix::new(v, "conjugate").unwrap()
    }

    pub fn simulate(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = self.prior_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        (0..n)
            .map(|_| theta + self.noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

pub fn as_dataset(y: &[f64]) -> Dataset {
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    Dataset::from_xy(&x, y).unwrap()
}

/// LOO by refitting the exact posterior on every `D_-n` with `s` fresh draws.
pub fn refit_loo(model: ConjugateNormal, y: &[f64], s: usize, seed: u64) -> Vec<f64> {
    bnn_core::assess::brute_force_loo_with(&as_dataset(y), |train, held| {
        let rest: Vec<f64> = train.y.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = model.posterior_draws(&rest, s, &mut rng);
        Ok(draws.iter().map(|t| model.log_lik(held.y[[0, 0]], *t)).collect())
    })
    .unwrap()
}

/// `(1/N) sum_n log sum_k w_k exp(l_nk)`, computed independently of the library.
pub fn mixture_log_score(log_dens: &Array2<f64>, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for row in log_dens.outer_iter() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().zip(w).map(|(l, wk)| wk * (l - m).exp()).sum();
        total += m + s.ln();
    }
    total / log_dens.nrows() as f64
}

/// Best log score over the simplex by repeatedly refined grids (K of 1, 2 or 3).
pub fn grid_stacking_optimum(log_dens: &Array2<f64>) -> f64 {
    let k = log_dens.ncols();
    let score = |w: &[f64]| mixture_log_score(log_dens, w);
    match k {
        1 => score(&[1.0]),
        2 => {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let mut best = (f64::NEG_INFINITY, 0.0);
            for _ in 0..8 {
                let step = (hi - lo) / 200.0;
                for i in 0..=200 {
                    let a = (lo + step * i as f64).clamp(0.0, 1.0);
                    let v = score(&[a, 1.0 - a]);
                    if v > best.0 {
                        best = (v, a);
                    }
                }
                lo = (best.1 - 2.0 * step).max(0.0);
                hi = (best.1 + 2.0 * step).min(1.0);
            }
            best.0
        }
        3 => {
            let mut centre = (1.0 / 3.0, 1.0 / 3.0);
            let mut radius = 1.0f64;
            let mut best = f64::NEG_INFINITY;
            for _ in 0..10 {
                let steps = 60;
                let h = 2.0 * radius / steps as f64;
                let mut arg = centre;
                for i in 0..=steps {
                    for j in 0..=steps {
                        // clamping onto the boundary keeps faces and edges on the grid
                        let a = (centre.0 - radius + h * i as f64).clamp(0.0, 1.0);
                        let b = (centre.1 - radius + h * j as f64).clamp(0.0, 1.0 - a);
                        let v = score(&[a, b, 1.0 - a - b]);
                        if v > best {
                            best = v;
                            arg = (a, b);
                        }
                    }
                }
                for w in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
                    let v = score(&w);
                    if v > best {
                        best = v;
                        arg = (w[0], w[1]);
                    }
                }
                centre = arg;
                radius = 3.0 * h;
            }
            best
        }
        _ => panic!("grid oracle supports at most three models"),
    }
}

/// Asymptotic Kolmogorov tail probability P(K > lambda).
pub fn kolmogorov_p(lambda: f64) -> f64 {
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov p-value of `xs` against the standard normal CDF.
pub fn ks_normal_p_value(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let normal = Normal::standard();
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = normal.cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    kolmogorov_p((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}
