mod common;

use bnn_core::assess::{elpd_loo, elpd_waic, WaicPenalty, KHAT_WARN};
use common::{refit_loo, ConjugateNormal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODEL: ConjugateNormal = ConjugateNormal {
    prior_var: 1.0,
    noise_var: 1.0,
};

#[test]
fn refit_oracle_matches_closed_form_on_three_points() {
    let y = [0.3, -1.2, 2.1];
    let refit = refit_loo(MODEL, &y, 20_000, 4);
    let exact = MODEL.exact_loo(&y);
    for (a, b) in refit.iter().zip(&exact) {
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
    assert_eq!(refit, refit_loo(MODEL, &y, 20_000, 4));
}

#[test]
fn psis_loo_agrees_with_refits_and_waic() {
    for seed in 0..3 {
        let y = MODEL.simulate(20, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let draws = MODEL.posterior_draws(&y, 4000, &mut rng);
        let ll = MODEL.loglik_matrix(&y, &draws);
        let loo = elpd_loo(&ll).unwrap();
        let oracle: f64 = refit_loo(MODEL, &y, 4000, 7).iter().sum();
        assert!((loo.total - oracle).abs() < 0.3, "loo {} oracle {oracle}", loo.total);
        let good = loo.khat.iter().filter(|k| **k < KHAT_WARN).count();
        assert!(good as f64 >= 0.95 * 20.0);
        let waic = elpd_waic(&ll, WaicPenalty::default()).unwrap();
        assert!((waic.total - loo.total).abs() < 0.5);
    }
}
