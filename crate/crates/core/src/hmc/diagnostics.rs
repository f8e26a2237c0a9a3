//! Rank-normalised split-R̂ and bulk effective sample size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::draws::PosteriorDraws;

/// Per-parameter convergence summary. `None` marks a degenerate input
/// (constant draws or too few iterations) rather than a numeric value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub bulk_ess: Option<f64>,
    pub split_rhat: Option<f64>,
}

/// Diagnostics for every parameter of a draw set, using its chain ids.
pub fn chain_diagnostics(draws: &PosteriorDraws) -> Vec<ParamDiagnostics> {
    let chains = draws.by_chain();
    (0..draws.num_params())
        .map(|p| {
            let per_chain: Vec<&[f64]> = chains.iter().map(|c| c[p].as_slice()).collect();
            param_diagnostics(&per_chain)
        })
        .collect()
}

/// Diagnostics for one parameter given its draws per chain.
pub fn param_diagnostics(chains: &[&[f64]]) -> ParamDiagnostics {
    let Some(split) = split_chains(chains) else {
        return ParamDiagnostics {
            bulk_ess: None,
            split_rhat: None,
        };
    };
    let all: Vec<f64> = split.iter().flatten().copied().collect();
    let first = all[0];
    if all.iter().all(|v| *v == first) || all.iter().any(|v| !v.is_finite()) {
        return ParamDiagnostics {
            bulk_ess: None,
            split_rhat: None,
        };
    }
    let z = rank_normalize(&split);
    let folded: Vec<Vec<f64>> = {
        let med = median(&all);
        let abs: Vec<Vec<f64>> = split
            .iter()
            .map(|c| c.iter().map(|v| (v - med).abs()).collect())
            .collect();
        rank_normalize(&abs)
    };
    let rhat_bulk = rhat(&z);
    let rhat_tail = rhat(&folded);
    let split_rhat = match (rhat_bulk, rhat_tail) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    ParamDiagnostics {
        bulk_ess: ess(&z),
        split_rhat,
    }
}

fn split_chains(chains: &[&[f64]]) -> Option<Vec<Vec<f64>>> {
    let n = chains.iter().map(|c| c.len()).min()?;
    if n < 4 {
        return None;
    }
    let half = n / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        // drop the middle draw of odd-length chains
        out.push(c[..half].to_vec());
        out.push(c[n - half..n].to_vec());
    }
    Some(out)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    crate::stats::sort_floats(&mut v);
    crate::stats::quantile_sorted(&v, 0.5)
}

/// Pooled fractional ranks (ties averaged) mapped through the normal quantile.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut idx: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
    for (c, chain) in chains.iter().enumerate() {
        for (i, &v) in chain.iter().enumerate() {
            idx.push((v, c, i));
        }
    }
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let s = total as f64;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && idx[end].0 == idx[start].0 {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, i) in &idx[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

fn rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| crate::stats::sample_variance(c)).collect();
    let grand = crate::stats::mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = crate::stats::mean(&vars);
    if !(w > 0.0) {
        return None;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let size = (2 * n).next_power_of_two();
    let mean = crate::stats::mean(x);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains[0].len();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let nf = n as f64;
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += crate::stats::sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return None;
    }
    let rho = |t: usize| 1.0 - (mean_var - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    if n > 1 {
        rho_hat[1] = rho(1);
    }
    let mut t = 1;
    while t + 2 < n {
        let even = rho(t + 1);
        let odd = rho(t + 2);
        if even + odd < 0.0 {
            break;
        }
        rho_hat[t + 1] = even;
        rho_hat[t + 2] = odd;
        t += 2;
    }
    let max_t = t;
    // enforce a monotone sequence of pair sums
    let mut k = 1;
    while k + 2 <= max_t {
        let prev = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>();
    let tau = tau.max(1.0 / total.log10());
    Some(total / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn refs(c: &[Vec<f64>]) -> Vec<&[f64]> {
        c.iter().map(|v| v.as_slice()).collect()
    }

    #[test]
    fn iid_draws_have_rhat_near_one() {
        for seed in 0..5 {
            let chains = iid_chains(4, 500, seed);
            let d = param_diagnostics(&refs(&chains));
            let r = d.split_rhat.unwrap();
            assert!(r < 1.01, "rhat {r}");
            let ess = d.bulk_ess.unwrap();
            assert!(ess > 1000.0 && ess < 3000.0, "ess {ess}");
        }
    }

    #[test]
    fn shifted_chain_inflates_rhat() {
        let mut chains = iid_chains(4, 500, 11);
        chains[2].iter_mut().for_each(|v| *v += 10.0);
        let r = param_diagnostics(&refs(&chains)).split_rhat.unwrap();
        assert!(r > 1.5, "rhat {r}");
    }

    #[test]
    fn constant_chain_is_flagged() {
        let chains = vec![vec![3.0; 200]; 4];
        let d = param_diagnostics(&refs(&chains));
        assert_eq!(d.bulk_ess, None);
        assert_eq!(d.split_rhat, None);
    }

    #[test]
    fn autocorrelated_chain_has_lower_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut chains = Vec::new();
        for _ in 0..4 {
            let mut x = 0.0;
            let c: Vec<f64> = (0..1000)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = 0.9 * x + e;
                    x
                })
                .collect();
            chains.push(c);
        }
        // AR(1) with phi = 0.9 has ESS/N = (1 - phi) / (1 + phi) ~ 0.053
        let ess = param_diagnostics(&refs(&chains)).bulk_ess.unwrap();
        assert!(ess > 100.0 && ess < 400.0, "ess {ess}");
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x = [1.0, 3.0, -2.0, 0.5, 4.0];
        let ac = autocovariance(&x);
        let m = crate::stats::mean(&x);
        for t in 0..x.len() {
            let direct: f64 = (0..x.len() - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / 5.0;
            assert!((ac[t] - direct).abs() < 1e-12);
        }
    }
}
