//! Declarative experiment description read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::combine::CombineMethod;
use crate::draws::DrawSource;
use crate::error::{Error, Result};
use crate::model::{Activation, PriorFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub model: ModelGrid,
    pub inference: InferenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combine: Option<CombineSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// `sin(10x) x^2` plus Gaussian noise on an interval.
    Sine,
    /// Inner-interval training data with a broader test interval.
    Related,
    /// LGBB lift table, from a file or the built-in surrogate.
    Lgbb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitChoice {
    /// Test points drawn independently of, and after, the training points.
    Independent,
    /// Train on `[-1.7, 1.7]`, test on the flanking intervals.
    Complement,
    /// Seeded shuffle with `train_fraction` of rows in training.
    Random,
    /// LGBB rows with sideslip 4 held out.
    Beta4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "default_split")]
    pub split: SplitChoice,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub x_low: f64,
    #[serde(default = "default_x_high")]
    pub x_high: f64,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// LGBB CSV; the surrogate generator is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_surrogate_rows")]
    pub surrogate_rows: usize,
    /// Defaults to on for LGBB and off otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
}

fn default_split() -> SplitChoice {
    SplitChoice::Independent
}
fn default_n_train() -> usize {
    500
}
fn default_n_test() -> usize {
    100
}
fn default_x_high() -> f64 {
    2.0
}
fn default_noise_variance() -> f64 {
    0.25
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_surrogate_rows() -> usize {
    crate::data::LGBB_ROWS
}

impl DatasetSpec {
    pub fn standardize(&self) -> bool {
        self.standardize.unwrap_or(self.kind == DatasetKind::Lgbb)
    }

    /// LGBB bundles held out by sideslip angle use the longer width-200 schedule.
    pub fn is_lgbb_ood(&self) -> bool {
        self.kind == DatasetKind::Lgbb && self.split == SplitChoice::Beta4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGrid {
    pub widths: Vec<usize>,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub priors: Vec<PriorFamily>,
}

fn default_depths() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSpec {
    pub methods: Vec<DrawSource>,
    /// Overrides the schedule for every cell when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vi_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_vi_draws")]
    pub vi_posterior_draws: usize,
    #[serde(default = "default_mc")]
    pub vi_mc_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmc_warmup: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmc_samples: Option<usize>,
    #[serde(default = "default_chains")]
    pub hmc_chains: usize,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_tree_depth")]
    pub max_tree_depth: usize,
}

fn default_vi_draws() -> usize {
    2000
}
fn default_mc() -> usize {
    1
}
fn default_chains() -> usize {
    1
}
fn default_target_accept() -> f64 {
    0.8
}
fn default_tree_depth() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombineSpec {
    pub members: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
}

fn default_methods() -> Vec<String> {
    CombineMethod::ALL.iter().map(|m| m.label().to_string()).collect()
}

impl CombineSpec {
    pub fn parsed_methods(&self) -> Result<Vec<CombineMethod>> {
        self.methods.iter().map(|m| CombineMethod::parse(m)).collect()
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("spec: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.name.trim().is_empty() {
            return bad("`name` must not be empty".into());
        }
        let g = &self.model;
        if g.widths.is_empty() || g.depths.is_empty() || g.activations.is_empty() || g.priors.is_empty() {
            return bad("`model` grid needs at least one width, depth, activation and prior".into());
        }
        if g.widths.contains(&0) || g.depths.contains(&0) {
            return bad("`model.widths` and `model.depths` must be positive".into());
        }
        let inf = &self.inference;
        if inf.methods.is_empty() {
            return bad("`inference.methods` must list VI and/or HMC".into());
        }
        if inf.vi_posterior_draws < crate::assess::MIN_DRAWS {
            return bad(format!(
                "`inference.vi_posterior_draws` must be at least {}",
                crate::assess::MIN_DRAWS
            ));
        }
        if inf.hmc_chains == 0 || inf.max_tree_depth == 0 || inf.vi_mc_samples == 0 {
            return bad("`inference.hmc_chains`, `max_tree_depth` and `vi_mc_samples` must be positive".into());
        }
        if !(inf.target_accept > 0.0 && inf.target_accept < 1.0) {
            return bad("`inference.target_accept` must lie in (0, 1)".into());
        }
        if matches!(inf.learning_rate, Some(lr) if !(lr > 0.0)) {
            return bad("`inference.learning_rate` must be positive".into());
        }
        let d = &self.dataset;
        match (d.kind, d.split) {
            (DatasetKind::Sine, SplitChoice::Independent | SplitChoice::Complement | SplitChoice::Random) => {}
            (DatasetKind::Related, SplitChoice::Independent) => {}
            (DatasetKind::Lgbb, SplitChoice::Random | SplitChoice::Beta4) => {}
            (k, s) => return bad(format!("`dataset.split` {s:?} is not available for {k:?} data")),
        }
        if d.kind == DatasetKind::Sine && (d.n_train == 0 || (d.split == SplitChoice::Independent && d.n_test == 0)) {
            return bad("`dataset.n_train` and `dataset.n_test` must be positive".into());
        }
        if !(d.x_low < d.x_high) {
            return bad("`dataset.x_low` must be below `dataset.x_high`".into());
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return bad("`dataset.train_fraction` must lie in (0, 1)".into());
        }
        if !(d.noise_variance >= 0.0) {
            return bad("`dataset.noise_variance` must be non-negative".into());
        }
        if let Some(p) = &d.path {
            if !p.exists() {
                return bad(format!("`dataset.path` {} does not exist", p.display()));
            }
        }
        if let Some(c) = &self.combine {
            if c.members == 0 {
                return bad("`combine.members` must be at least 1".into());
            }
            if c.methods.is_empty() {
                return bad("`combine.methods` must not be empty".into());
            }
            c.parsed_methods()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
seed = 3

[dataset]
kind = "sine"

[model]
widths = [20]
activations = ["relu"]
priors = ["gaussian"]

[inference]
methods = ["VI"]
"#;

    #[test]
    fn minimal_spec_gets_defaults() {
        let s = ExperimentSpec::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.dataset.n_train, 500);
        assert_eq!(s.dataset.n_test, 100);
        assert_eq!(s.dataset.noise_variance, 0.25);
        assert_eq!((s.dataset.x_low, s.dataset.x_high), (0.0, 2.0));
        assert_eq!(s.model.depths, vec![1]);
        assert_eq!(s.inference.vi_posterior_draws, 2000);
        assert!(!s.dataset.standardize());
    }

    #[test]
    fn round_trips_through_toml() {
        let s = ExperimentSpec::from_toml_str(MINIMAL).unwrap();
        let again = ExperimentSpec::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn missing_dataset_names_the_field() {
        let text = MINIMAL.replace("[dataset]\nkind = \"sine\"\n", "");
        let err = ExperimentSpec::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("dataset"), "{err}");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentSpec::from_toml_str(&MINIMAL.replace("seed = 3", "seed = 3\nsede = 4")).is_err());
        assert!(ExperimentSpec::from_toml_str(&MINIMAL.replace("widths = [20]", "widths = []")).is_err());
        assert!(ExperimentSpec::from_toml_str(&MINIMAL.replace("\"relu\"", "\"tanh\"")).is_err());
        let bad_combine = format!("{MINIMAL}\n[combine]\nmembers = 2\nmethods = [\"BMA\"]\n");
        assert!(ExperimentSpec::from_toml_str(&bad_combine).is_err());
        let bad_split = MINIMAL.replace("kind = \"sine\"", "kind = \"sine\"\nsplit = \"beta4\"");
        assert!(ExperimentSpec::from_toml_str(&bad_split).is_err());
    }
}
