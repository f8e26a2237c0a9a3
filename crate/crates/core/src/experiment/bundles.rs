//! Named experiment bundles.

use super::spec::{
    CombineSpec, DatasetKind, DatasetSpec, ExperimentSpec, InferenceSpec, ModelGrid, SplitChoice,
};
use crate::combine::CombineMethod;
use crate::draws::DrawSource;
use crate::error::{Error, Result};
use crate::model::{Activation, PriorFamily};

pub const BUNDLE_NAMES: [&str; 6] = [
    "width-sweep",
    "depth-sweep",
    "ood-complement",
    "stacking-related",
    "lgbb-nonood",
    "lgbb-ood",
];

/// Measurement noise variance of the LGBB surrogate (lift is of order one).
const LGBB_NOISE_VARIANCE: f64 = 1e-4;
const ENSEMBLE_MEMBERS: usize = 10;
const LGBB_WIDTHS: [usize; 3] = [20, 100, 200];

fn sine(split: SplitChoice) -> DatasetSpec {
    DatasetSpec {
        kind: DatasetKind::Sine,
        split,
        n_train: 500,
        n_test: 100,
        x_low: 0.0,
        x_high: 2.0,
        noise_variance: 0.25,
        train_fraction: 0.8,
        path: None,
        surrogate_rows: crate::data::LGBB_ROWS,
        standardize: None,
    }
}

fn lgbb(split: SplitChoice) -> DatasetSpec {
    DatasetSpec {
        kind: DatasetKind::Lgbb,
        noise_variance: LGBB_NOISE_VARIANCE,
        ..sine(split)
    }
}

fn grid(widths: &[usize], depths: &[usize], activations: &[Activation], priors: &[PriorFamily]) -> ModelGrid {
    ModelGrid {
        widths: widths.to_vec(),
        depths: depths.to_vec(),
        activations: activations.to_vec(),
        priors: priors.to_vec(),
    }
}

fn inference(methods: &[DrawSource]) -> InferenceSpec {
    InferenceSpec {
        methods: methods.to_vec(),
        vi_iterations: None,
        learning_rate: None,
        vi_posterior_draws: 2000,
        vi_mc_samples: 1,
        hmc_warmup: None,
        hmc_samples: None,
        hmc_chains: 1,
        target_accept: 0.8,
        max_tree_depth: 10,
    }
}

fn ensemble() -> Option<CombineSpec> {
    Some(CombineSpec {
        members: ENSEMBLE_MEMBERS,
        methods: CombineMethod::ALL.iter().map(|m| m.label().to_string()).collect(),
    })
}

/// The spec behind a named bundle; unknown names list the valid ones.
pub fn bundle_spec(name: &str) -> Result<ExperimentSpec> {
    use Activation::{Relu, Sigmoid};
    use PriorFamily::{Gaussian, StudentT};
    let both_acts = [Relu, Sigmoid];
    let both_priors = [Gaussian, StudentT];
    let both_engines = [DrawSource::Vi, DrawSource::Hmc];
    let (dataset, model, inf, combine) = match name {
        "width-sweep" => (
            sine(SplitChoice::Independent),
            grid(&[20, 200, 1000, 2000], &[1], &both_acts, &both_priors),
            inference(&both_engines),
            None,
        ),
        "depth-sweep" => (
            sine(SplitChoice::Independent),
            grid(&[20], &[1, 2, 3, 4, 5, 6], &both_acts, &both_priors),
            inference(&both_engines),
            None,
        ),
        "ood-complement" => (
            DatasetSpec {
                x_low: -2.8,
                x_high: 1.9,
                ..sine(SplitChoice::Complement)
            },
            grid(&[20, 200], &[1], &both_acts, &[Gaussian]),
            inference(&both_engines),
            None,
        ),
        "stacking-related" => (
            DatasetSpec {
                kind: DatasetKind::Related,
                ..sine(SplitChoice::Independent)
            },
            grid(&[20], &[1], &[Relu], &[Gaussian]),
            inference(&[DrawSource::Vi]),
            ensemble(),
        ),
        "lgbb-nonood" => (
            lgbb(SplitChoice::Random),
            grid(&LGBB_WIDTHS, &[1], &[Relu], &[Gaussian]),
            inference(&[DrawSource::Vi]),
            ensemble(),
        ),
        "lgbb-ood" => (
            lgbb(SplitChoice::Beta4),
            grid(&LGBB_WIDTHS, &[1], &[Relu], &[Gaussian]),
            inference(&[DrawSource::Vi]),
            ensemble(),
        ),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown bundle `{other}`; valid bundles: {}",
                BUNDLE_NAMES.join(", ")
            )))
        }
    };
    let spec = ExperimentSpec {
        name: name.to_string(),
        seed: 20_240_601,
        out_dir: None,
        dataset,
        model,
        inference: inf,
        combine,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::super::runner::{plan_cells, RunOptions};
    use super::*;

    #[test]
    fn every_bundle_is_valid() {
        for name in BUNDLE_NAMES {
            bundle_spec(name).unwrap();
        }
    }

    #[test]
    fn depth_sweep_has_24_cells_per_engine() {
        let plan = plan_cells(&bundle_spec("depth-sweep").unwrap(), &RunOptions::new("unused")).unwrap();
        let vi = plan.cells.iter().filter(|c| c.method_label().starts_with("VI")).count();
        let hmc = plan.cells.iter().filter(|c| c.method_label().starts_with("HMC")).count();
        assert_eq!((vi, hmc), (24, 24));
        let depths: std::collections::BTreeSet<usize> = plan.cells.iter().map(|c| c.depth()).collect();
        assert_eq!(depths.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        assert!(plan.cells.iter().all(|c| c.width() == 20));
    }

    #[test]
    fn stacking_bundle_fits_ten_seeds() {
        let plan = plan_cells(&bundle_spec("stacking-related").unwrap(), &RunOptions::new("unused")).unwrap();
        assert_eq!(plan.cells.len(), 10);
        let mut seeds: Vec<u64> = plan.cells.iter().map(|c| c.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 10);
        assert!(plan.cells.iter().all(|c| c.group_id == plan.cells[0].group_id));
    }

    #[test]
    fn unknown_bundle_lists_names() {
        let msg = bundle_spec("nope").unwrap_err().to_string();
        for name in BUNDLE_NAMES {
            assert!(msg.contains(name));
        }
    }
}
