mod common;

use bnn_core::density::DiagonalGaussian;
use bnn_core::hmc::{chain_diagnostics, nuts_sample, NutsConfig};

#[test]
fn standard_normal_moments_in_ten_dimensions() {
    let cfg = NutsConfig {
        warmup: 1000,
        samples: 1000,
        chains: 4,
        seed: 10,
        ..NutsConfig::default()
    };
    let draws = nuts_sample(&DiagonalGaussian::standard(10), &cfg).unwrap();
    assert_eq!(draws.num_draws(), 4000);
    for p in 0..10 {
        let col = draws.draws.column(p).to_vec();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!(m.abs() < 0.05, "coordinate {p} mean {m}");
        assert!((v - 1.0).abs() < 0.1, "coordinate {p} variance {v}");
    }
}

#[test]
fn draws_pass_kolmogorov_smirnov_against_analytic_cdf() {
    for dim in [1usize, 10] {
        let cfg = NutsConfig {
            warmup: 1000,
            samples: 1000,
            chains: 4,
            seed: 10,
            ..NutsConfig::default()
        };
        let draws = nuts_sample(&DiagonalGaussian::standard(dim), &cfg).unwrap();
        let alpha = 0.01 / dim as f64;
        for p in 0..dim {
            // thin so the i.i.d. assumption behind the KS statistic is closer to true
            let col: Vec<f64> = draws.draws.column(p).iter().step_by(4).copied().collect();
            let pv = common::ks_normal_p_value(col);
            assert!(pv > alpha, "dim {dim} coordinate {p} p-value {pv}");
        }
        for d in chain_diagnostics(&draws) {
            assert!(d.split_rhat.unwrap() < 1.05);
        }
    }
}
