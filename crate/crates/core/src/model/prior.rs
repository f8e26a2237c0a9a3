use ndarray::Array2;
use rand::Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::{NetworkConfig, PriorFamily};

/// Zero-centred scalar density shared by every entry of a parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScalarPrior {
    Gaussian { variance: f64 },
    /// Student-t with location 0 and squared scale `scale_sq`.
    StudentT { df: f64, scale_sq: f64 },
}

impl ScalarPrior {
    fn new(family: PriorFamily, scale_sq: f64, df: f64) -> Self {
        match family {
            PriorFamily::Gaussian => ScalarPrior::Gaussian { variance: scale_sq },
            PriorFamily::StudentT => ScalarPrior::StudentT { df, scale_sq },
        }
    }

    /// Second argument of `F(0, .)`: the variance for Gaussians, squared scale for Student-t.
    pub fn scale_sq(&self) -> f64 {
        match *self {
            ScalarPrior::Gaussian { variance } => variance,
            ScalarPrior::StudentT { scale_sq, .. } => scale_sq,
        }
    }

    pub fn log_normalizer(&self) -> f64 {
        match *self {
            ScalarPrior::Gaussian { variance } => -0.5 * (2.0 * std::f64::consts::PI * variance).ln(),
            ScalarPrior::StudentT { df, scale_sq } => {
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * std::f64::consts::PI * scale_sq).ln()
            }
        }
    }

    /// Log density without the normalising constant.
    #[inline]
    pub fn log_kernel(&self, x: f64) -> f64 {
        match *self {
            ScalarPrior::Gaussian { variance } => -0.5 * x * x / variance,
            ScalarPrior::StudentT { df, scale_sq } => {
                -0.5 * (df + 1.0) * (x * x / (df * scale_sq)).ln_1p()
            }
        }
    }

    #[inline]
    pub fn dlog(&self, x: f64) -> f64 {
        match *self {
            ScalarPrior::Gaussian { variance } => -x / variance,
            ScalarPrior::StudentT { df, scale_sq } => -(df + 1.0) * x / (df * scale_sq + x * x),
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.log_normalizer() + self.log_kernel(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScalarPrior::Gaussian { variance } => variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
            ScalarPrior::StudentT { df, scale_sq } => {
                let t = StudentT::new(df).expect("prior df is positive");
                scale_sq.sqrt() * rng.sample(t)
            }
        }
    }

    /// Sum of log densities over a block together with `d/dx` written into `grad`.
    pub(crate) fn accumulate(&self, xs: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let kernel: f64 = xs.iter().map(|&x| self.log_kernel(x)).sum();
        if let Some(g) = grad {
            for (gi, &x) in g.iter_mut().zip(xs) {
                *gi += self.dlog(x);
            }
        }
        kernel + xs.len() as f64 * self.log_normalizer()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerPrior {
    pub weight: ScalarPrior,
    pub bias: ScalarPrior,
}

/// Priors for layers `1..=L+1`.
///
/// First-layer weights use `1/(4L)`, later weights `4/D_{l-1}` (inverse of the
/// preceding width), and every bias is Gaussian with variance `1/(4L)`.
pub fn layer_priors(config: &NetworkConfig) -> Vec<LayerPrior> {
    let depth = config.depth() as f64;
    let dims = config.layer_dims();
    let base = 1.0 / (4.0 * depth);
    (1..dims.len())
        .map(|l| {
            let weight_scale_sq = if l == 1 { base } else { 4.0 / dims[l - 1] as f64 };
            LayerPrior {
                weight: ScalarPrior::new(config.prior_family, weight_scale_sq, config.student_t_df),
                bias: ScalarPrior::Gaussian { variance: base },
            }
        })
        .collect()
}

/// `s` independent draws from the full prior, one flat parameter vector per row.
pub fn sample_prior<R: Rng + ?Sized>(config: &NetworkConfig, s: usize, rng: &mut R) -> Array2<f64> {
    let layout = config.layout();
    let priors = layer_priors(config);
    let noise_sd = config.noise_prior_scale_sq.sqrt();
    let mut out = Array2::zeros((s, config.param_count()));
    for mut row in out.rows_mut() {
        let row = row.as_slice_mut().expect("fresh array is row-major");
        for (slot, prior) in layout.layers().iter().zip(&priors) {
            row[slot.weight_range()].iter_mut().for_each(|v| *v = prior.weight.sample(rng));
            row[slot.bias_range()].iter_mut().for_each(|v| *v = prior.bias.sample(rng));
        }
        // sigma is half-normal, stored as log sigma
        let z: f64 = rng.sample(StandardNormal);
        row[layout.log_sigma_index()] = (noise_sd * z.abs()).ln();
    }
    out
}

/// Half-normal prior on sigma expressed on `s = log sigma`, including the `+s` Jacobian.
pub(crate) fn log_sigma_prior(s: f64, variance: f64) -> (f64, f64) {
    let sigma_sq = (2.0 * s).exp();
    let value = std::f64::consts::LN_2 - 0.5 * (2.0 * std::f64::consts::PI * variance).ln()
        - 0.5 * sigma_sq / variance
        + s;
    let grad = -sigma_sq / variance + 1.0;
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, NetworkConfig, PriorFamily};
    use statrs::distribution::{Continuous, StudentsT};

    #[test]
    fn single_layer_first_weight_variance_is_quarter() {
        let cfg = NetworkConfig::single_layer(20, Activation::Relu, PriorFamily::Gaussian);
        let priors = layer_priors(&cfg);
        assert_eq!(priors[0].weight.scale_sq(), 0.25);
        assert_eq!(priors[1].weight.scale_sq(), 4.0 / 20.0);
        assert_eq!(priors[0].bias.scale_sq(), 0.25);
        assert_eq!(priors[1].bias.scale_sq(), 0.25);
    }

    #[test]
    fn scaling_follows_preceding_width() {
        let cfg = NetworkConfig::new(
            2,
            vec![7, 11, 13],
            3,
            Activation::Sigmoid,
            PriorFamily::StudentT,
        )
        .unwrap();
        let priors = layer_priors(&cfg);
        let dims = cfg.layer_dims();
        assert_eq!(priors.len(), 4);
        assert_eq!(priors[0].weight.scale_sq(), 1.0 / 12.0);
        for l in 2..=4 {
            assert_eq!(priors[l - 1].weight.scale_sq(), 4.0 / dims[l - 1] as f64);
        }
        for p in &priors {
            assert_eq!(p.bias, ScalarPrior::Gaussian { variance: 1.0 / 12.0 });
            assert!(matches!(p.weight, ScalarPrior::StudentT { df, .. } if df == 5.0));
        }
    }

    #[test]
    fn gaussian_at_mode() {
        let v = 0.37;
        let p = ScalarPrior::Gaussian { variance: v };
        let expected = -0.5 * (2.0 * std::f64::consts::PI * v).ln();
        assert!((p.log_pdf(0.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn student_t_matches_reference_density() {
        for &(scale_sq, x) in &[(0.25, 0.0), (0.25, 0.7), (4.0 / 20.0, -1.3), (1.0, 3.0)] {
            let p = ScalarPrior::StudentT { df: 5.0, scale_sq };
            let reference = StudentsT::new(0.0, f64::sqrt(scale_sq), 5.0).unwrap();
            assert!((p.log_pdf(x) - reference.ln_pdf(x)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn log_sigma_prior_gradient() {
        let v = 0.001;
        for &s in &[-4.0, -1.0, 0.0, 0.5] {
            let h = 1e-6;
            let fd = (log_sigma_prior(s + h, v).0 - log_sigma_prior(s - h, v).0) / (2.0 * h);
            let g = log_sigma_prior(s, v).1;
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "s={s}: {fd} vs {g}");
        }
    }

    #[test]
    fn prior_draws_match_block_variances() {
        use rand::SeedableRng;
        let cfg = NetworkConfig::single_layer(10, Activation::Relu, PriorFamily::Gaussian);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let draws = sample_prior(&cfg, 20_000, &mut rng);
        let layout = cfg.layout();
        let priors = layer_priors(&cfg);
        for (slot, prior) in layout.layers().iter().zip(&priors) {
            for (range, want) in [(slot.weight_range(), prior.weight.scale_sq()), (slot.bias_range(), prior.bias.scale_sq())] {
                let vals: Vec<f64> = range.flat_map(|j| draws.column(j).to_vec()).collect();
                let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
                // sampling sd of the variance estimate is want * sqrt(2 / n)
                let tol = 4.0 * want * (2.0 / vals.len() as f64).sqrt();
                assert!((var - want).abs() < tol, "{var} vs {want}");
            }
        }
        // log of a half-normal: E|Z| = sqrt(2/pi) * sd
        let sigma_mean = draws.column(layout.log_sigma_index()).iter().map(|v| v.exp()).sum::<f64>() / 20_000.0;
        let want = (2.0 * cfg.noise_prior_scale_sq / std::f64::consts::PI).sqrt();
        assert!((sigma_mean - want).abs() < 0.03 * want);
    }
}
