//! One entry point for fitting a network posterior with either engine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::BnnPosterior;
use crate::draws::PosteriorDraws;
use crate::error::Result;
use crate::hmc::{sample_network_posterior, NutsConfig};
use crate::model::{Dataset, NetworkConfig};
use crate::vi::{fit_advi, sample_variational, ViConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "lowercase")]
pub enum InferenceRecipe {
    Vi { config: ViConfig, posterior_draws: usize },
    Hmc(NutsConfig),
}

impl InferenceRecipe {
    pub fn seed(&self) -> u64 {
        match self {
            InferenceRecipe::Vi { config, .. } => config.seed,
            InferenceRecipe::Hmc(c) => c.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            InferenceRecipe::Vi { config, .. } => config.seed = seed,
            InferenceRecipe::Hmc(c) => c.seed = seed,
        }
        out
    }
}

/// Fits the posterior of `model` on `data` and returns its draws.
///
/// Variational draws come from a stream separate from the optimiser's.
pub fn fit_posterior(model: &NetworkConfig, data: &Dataset, recipe: &InferenceRecipe) -> Result<PosteriorDraws> {
    model.validate()?;
    data.check_dims(model)?;
    match recipe {
        InferenceRecipe::Vi {
            config,
            posterior_draws,
        } => {
            let fit = fit_advi(&BnnPosterior::new(model, data), config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1);
            let mut draws = sample_variational(&fit.params, *posterior_draws, &mut rng)?;
            draws.wall_time_s = fit.elapsed_s;
            draws.diagnostics.insert("final_elbo".into(), fit.final_elbo);
            Ok(draws)
        }
        InferenceRecipe::Hmc(config) => sample_network_posterior(model, data, config),
    }
}
