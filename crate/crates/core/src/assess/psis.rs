//! Generalized Pareto tail fitting and Pareto-smoothed importance weights.

use crate::error::{Error, Result};
use crate::stats::sort_floats;

/// Shape and scale of a generalized Pareto fit; a positive shape means a heavy tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdFit {
    pub khat: f64,
    pub sigma: f64,
}

/// Smallest tail accepted by [`fit_generalized_pareto`].
pub const MIN_TAIL: usize = 5;

/// Zhang–Stephens profile-likelihood estimate of GPD shape and scale for
/// exceedances over a threshold, with the weakly informative adjustment of
/// the shape towards 0.5 for small tails.
pub fn fit_generalized_pareto(tail: &[f64]) -> Result<GpdFit> {
    if tail.len() < MIN_TAIL {
        return Err(Error::GpdFit(format!(
            "need at least {MIN_TAIL} exceedances, got {}",
            tail.len()
        )));
    }
    if tail.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::GpdFit("exceedances must be finite and non-negative".into()));
    }
    let mut x = tail.to_vec();
    sort_floats(&mut x);
    let n = x.len();
    if x[0] == x[n - 1] {
        return Err(Error::GpdFit("all exceedances are equal".into()));
    }
    let nf = n as f64;
    const PRIOR: f64 = 3.0;
    let m = 30 + (nf.sqrt() as usize);
    let x_star = x[((nf / 4.0 + 0.5).floor() as usize).max(1) - 1];
    let x_max = x[n - 1];

    // profile log-likelihood of theta = -k / sigma on a grid
    let profile = |theta: f64| {
        let b = -theta;
        let k = x.iter().map(|v| (b * v).ln_1p()).sum::<f64>() / nf;
        nf * ((b / k).ln() - k - 1.0)
    };
    let thetas: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / PRIOR / x_star)
        .collect();
    let log_lik: Vec<f64> = thetas.iter().map(|&t| profile(t)).collect();
    let lse = crate::stats::log_sum_exp(&log_lik);
    let theta_hat: f64 = thetas
        .iter()
        .zip(&log_lik)
        .map(|(t, l)| {
            let w = (l - lse).exp();
            if w.is_finite() {
                t * w
            } else {
                0.0
            }
        })
        .sum();
    let k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    let k = k * nf / (nf + 10.0) + 0.5 * 10.0 / (nf + 10.0);
    if !k.is_finite() || !sigma.is_finite() {
        return Err(Error::GpdFit("non-finite estimate".into()));
    }
    Ok(GpdFit { khat: k, sigma })
}

/// Quantile function of the GPD with location 0.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Number of largest ratios replaced by GPD order statistics.
pub fn tail_length(s: usize) -> usize {
    let s = s as f64;
    (0.2 * s).ceil().min((3.0 * s.sqrt()).ceil()) as usize
}

/// Fewest draws accepted by [`psis_smooth`].
pub const MIN_DRAWS: usize = 40;

/// Smoothed log weights (on the scale of the input) and the tail shape estimate.
///
/// When the tail cannot be fitted the weights are only truncated and the
/// shape is reported as `+inf`.
pub fn psis_smooth(log_ratios: &[f64]) -> Result<(Vec<f64>, f64)> {
    let s = log_ratios.len();
    if s < MIN_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "smoothing needs at least {MIN_DRAWS} draws, got {s}"
        )));
    }
    if log_ratios.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("log importance ratio"));
    }
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();

    let m = tail_length(s);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let cutoff = lw[order[s - m - 1]].max(f64::MIN_POSITIVE.ln());
    let tail_ids = &order[s - m..];
    let tail_lw: Vec<f64> = tail_ids.iter().map(|&i| lw[i]).collect();

    let spread = tail_lw[m - 1] - tail_lw[0];
    let mut khat = f64::INFINITY;
    if spread.abs() >= f64::EPSILON / 100.0 {
        let exp_cutoff = cutoff.exp();
        let exceed: Vec<f64> = tail_lw.iter().map(|v| (v.exp() - exp_cutoff).max(0.0)).collect();
        if let Ok(fit) = fit_generalized_pareto(&exceed) {
            khat = fit.khat;
            for (j, &i) in tail_ids.iter().enumerate() {
                let p = (j as f64 + 0.5) / m as f64;
                lw[i] = (gpd_quantile(p, fit.khat, fit.sigma) + exp_cutoff).ln();
            }
        }
    }
    for v in lw.iter_mut() {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    Ok((lw.into_iter().map(|v| v + max).collect(), khat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    #[test]
    fn exponential_sample_has_zero_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..10_000).map(|_| Exp1.sample(&mut rng)).collect();
        let fit = fit_generalized_pareto(&x).unwrap();
        assert!(fit.khat.abs() < 0.05, "k {}", fit.khat);
        assert!((fit.sigma - 1.0).abs() < 0.05);
    }

    #[test]
    fn pareto_sample_recovers_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..10_000).map(|_| gpd_quantile(rng.gen::<f64>(), 0.5, 2.0)).collect();
        let fit = fit_generalized_pareto(&x).unwrap();
        assert!((fit.khat - 0.5).abs() < 0.05, "k {}", fit.khat);
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..500).map(|_| gpd_quantile(rng.gen::<f64>(), 0.3, 1.0)).collect();
        let a = fit_generalized_pareto(&x).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * 7.5).collect();
        let b = fit_generalized_pareto(&scaled).unwrap();
        assert!((a.khat - b.khat).abs() < 1e-10);
        assert!((b.sigma / a.sigma - 7.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_short_samples_are_rejected() {
        assert!(fit_generalized_pareto(&[1.0; 20]).is_err());
        assert!(fit_generalized_pareto(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn tail_length_rule() {
        assert_eq!(tail_length(100), 20);
        assert_eq!(tail_length(4000), 190);
        assert_eq!(tail_length(1000), 95);
    }

    #[test]
    fn constant_ratios_are_left_alone() {
        let lr = vec![-3.2; 200];
        let (lw, k) = psis_smooth(&lr).unwrap();
        assert!(k.is_infinite());
        for v in lw {
            assert!((v + 3.2).abs() < 1e-10);
        }
    }

    #[test]
    fn body_of_distribution_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lr: Vec<f64> = (0..1000).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let (lw, _) = psis_smooth(&lr).unwrap();
        let m = tail_length(1000);
        let mut order: Vec<usize> = (0..1000).collect();
        order.sort_by(|&a, &b| lr[a].total_cmp(&lr[b]));
        for &i in &order[..1000 - m] {
            assert!((lw[i] - lr[i]).abs() < 1e-12);
        }
        let sorted_body: Vec<f64> = order[..1000 - m].iter().map(|&i| lw[i]).collect();
        assert!(sorted_body.windows(2).all(|w| w[0] <= w[1]));
        let raw_max = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lw.iter().all(|v| *v <= raw_max));
    }

    fn normalized_variance(lw: &[f64]) -> f64 {
        let lse = crate::stats::log_sum_exp(lw);
        let w: Vec<f64> = lw.iter().map(|v| (v - lse).exp()).collect();
        crate::stats::sample_variance(&w)
    }

    #[test]
    fn smoothing_reduces_weight_variance_for_heavy_tails() {
        // lognormal ratios with log-scale 2, averaged over 10^4 replicate simulations
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut raw, mut smooth) = (0.0, 0.0);
        let mut fewer = 0;
        let reps = 10_000;
        for _ in 0..reps {
            let lr: Vec<f64> = (0..100).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let (lw, _) = psis_smooth(&lr).unwrap();
            let (a, b) = (normalized_variance(&lr), normalized_variance(&lw));
            raw += a / reps as f64;
            smooth += b / reps as f64;
            fewer += (b < a) as usize;
        }
        println!("raw {raw:e} smoothed {smooth:e} smaller in {fewer}/{reps}");
        assert!(smooth < raw);
    }

    #[test]
    fn too_few_draws_is_an_error() {
        assert!(psis_smooth(&[0.0; 39]).is_err());
    }
}
