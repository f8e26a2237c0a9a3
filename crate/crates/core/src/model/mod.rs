//! Feed-forward regression network with a Gaussian observation model.
//!
//! Parameters live in one flat unconstrained vector. For every layer
//! `l = 1..=L+1` the vector holds the weight matrix `W_l` (shape
//! `D_l x D_{l-1}`, row-major) followed by the bias `b_l`; a single trailing
//! slot stores `log sigma`, the log of the observation noise standard
//! deviation.

mod network;
mod prior;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{forward, grad_log_posterior, log_likelihood, log_posterior, log_prior};
pub(crate) use network::{
    forward_values, pointwise_log_lik_values, value_and_grad as network_value_and_grad,
};
pub use prior::{layer_priors, sample_prior, LayerPrior, ScalarPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[serde(alias = "ReLU")]
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn short_name(self) -> &'static str {
        match self {
            Activation::Relu => "R",
            Activation::Sigmoid => "S",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorFamily {
    Gaussian,
    #[serde(alias = "student_t", alias = "studentt")]
    StudentT,
}

impl fmt::Display for PriorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorFamily::Gaussian => "gaussian",
            PriorFamily::StudentT => "student-t",
        })
    }
}

/// Architecture and prior of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub prior_family: PriorFamily,
    #[serde(default = "default_df")]
    pub student_t_df: f64,
    #[serde(default = "default_noise_prior")]
    pub noise_prior_scale_sq: f64,
}

fn default_df() -> f64 {
    5.0
}

fn default_noise_prior() -> f64 {
    0.001
}

impl NetworkConfig {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        prior_family: PriorFamily,
    ) -> Result<Self> {
        let config = NetworkConfig {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
            prior_family,
            student_t_df: default_df(),
            noise_prior_scale_sq: default_noise_prior(),
        };
        config.validate()?;
        Ok(config)
    }

    /// One hidden layer of `width` units, scalar input and output.
    pub fn single_layer(width: usize, activation: Activation, prior: PriorFamily) -> Self {
        Self::new(1, vec![width], 1, activation, prior).expect("width must be positive")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig(
                "input and output dimensions must be positive".into(),
            ));
        }
        if self.hidden_widths.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(self.student_t_df > 0.0) || !(self.noise_prior_scale_sq > 0.0) {
            return Err(Error::InvalidConfig(
                "student_t_df and noise_prior_scale_sq must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Layer widths `D_0..=D_{L+1}`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.layer_dims())
    }
}

/// Offsets of every block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    layers: Vec<LayerSlot>,
    log_sigma: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

impl ParamLayout {
    fn new(dims: &[usize]) -> Self {
        let mut offset = 0;
        let layers = dims
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += (w[0] + 1) * w[1];
                slot
            })
            .collect();
        ParamLayout {
            layers,
            log_sigma: offset,
        }
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn log_sigma_index(&self) -> usize {
        self.log_sigma
    }

    pub fn len(&self) -> usize {
        self.log_sigma + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A point in the unconstrained parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

/// Structured view of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub log_sigma: f64,
}

impl ParamVector {
    pub fn zeros(config: &NetworkConfig) -> Self {
        ParamVector {
            values: vec![0.0; config.param_count()],
        }
    }

    pub fn from_values(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        check_len(config, values.len())?;
        Ok(ParamVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn log_sigma(&self) -> f64 {
        *self.values.last().expect("parameter vector is never empty")
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma().exp()
    }

    pub fn pack(config: &NetworkConfig, params: &NetworkParams) -> Result<Self> {
        let layout = config.layout();
        if params.weights.len() != layout.layers().len()
            || params.biases.len() != layout.layers().len()
        {
            return Err(Error::DimensionMismatch {
                layer: "layer count".into(),
                expected: layout.layers().len(),
                got: params.weights.len(),
            });
        }
        let mut values = vec![0.0; layout.len()];
        for (l, slot) in layout.layers().iter().enumerate() {
            let w = &params.weights[l];
            if w.dim() != (slot.fan_out, slot.fan_in) {
                return Err(Error::DimensionMismatch {
                    layer: format!("weights of layer {}", l + 1),
                    expected: slot.fan_in * slot.fan_out,
                    got: w.len(),
                });
            }
            if params.biases[l].len() != slot.fan_out {
                return Err(Error::DimensionMismatch {
                    layer: format!("bias of layer {}", l + 1),
                    expected: slot.fan_out,
                    got: params.biases[l].len(),
                });
            }
            for (dst, src) in values[slot.weight_range()].iter_mut().zip(w.iter()) {
                *dst = *src;
            }
            values[slot.bias_range()].copy_from_slice(
                params.biases[l]
                    .as_slice()
                    .expect("owned bias vectors are contiguous"),
            );
        }
        values[layout.log_sigma_index()] = params.log_sigma;
        Ok(ParamVector { values })
    }

    pub fn unpack(&self, config: &NetworkConfig) -> Result<NetworkParams> {
        check_len(config, self.values.len())?;
        let layout = config.layout();
        let mut weights = Vec::with_capacity(layout.layers().len());
        let mut biases = Vec::with_capacity(layout.layers().len());
        for slot in layout.layers() {
            weights.push(weight_view(&self.values, slot).to_owned());
            biases.push(Array1::from(self.values[slot.bias_range()].to_vec()));
        }
        Ok(NetworkParams {
            weights,
            biases,
            log_sigma: self.values[layout.log_sigma_index()],
        })
    }
}

fn check_len(config: &NetworkConfig, got: usize) -> Result<()> {
    let expected = config.param_count();
    if got != expected {
        return Err(Error::DimensionMismatch {
            layer: "parameter vector".into(),
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn weight_view<'a>(values: &'a [f64], slot: &LayerSlot) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((slot.fan_out, slot.fan_in), &values[slot.weight_range()])
        .expect("layout ranges match block shapes")
}

pub(crate) fn bias_view<'a>(values: &'a [f64], slot: &LayerSlot) -> ArrayView1<'a, f64> {
    ArrayView1::from(&values[slot.bias_range()])
}

/// Regression data: `x` is `N x input_dim`, `y` is `N x output_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("dataset must contain at least one row".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch {
                layer: "dataset rows".into(),
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        Ok(Dataset {
            x,
            y,
            meta: BTreeMap::new(),
        })
    }

    /// Scalar-input, scalar-output data from paired slices.
    pub fn from_xy(x: &[f64], y: &[f64]) -> Result<Self> {
        let xs = Array2::from_shape_vec((x.len(), 1), x.to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let ys = Array2::from_shape_vec((y.len(), 1), y.to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Dataset::new(xs, ys)
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let x = self.x.select(ndarray::Axis(0), indices);
        let y = self.y.select(ndarray::Axis(0), indices);
        let mut out = Dataset::new(x, y)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Copy of the data with row `n` removed.
    pub fn without_row(&self, n: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| i != n).collect();
        self.select(&keep)
    }

    pub fn check_dims(&self, config: &NetworkConfig) -> Result<()> {
        if self.input_dim() != config.input_dim {
            return Err(Error::DimensionMismatch {
                layer: "input layer".into(),
                expected: config.input_dim,
                got: self.input_dim(),
            });
        }
        if self.output_dim() != config.output_dim {
            return Err(Error::DimensionMismatch {
                layer: "output layer".into(),
                expected: config.output_dim,
                got: self.output_dim(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn param_count_matches_layer_sum() {
        let cfg = NetworkConfig::new(3, vec![4, 5], 2, Activation::Relu, PriorFamily::Gaussian)
            .unwrap();
        // (3+1)*4 + (4+1)*5 + (5+1)*2 + 1
        assert_eq!(cfg.param_count(), 16 + 25 + 12 + 1);
        assert_eq!(cfg.layout().log_sigma_index(), 53);
    }

    #[test]
    fn rejects_empty_hidden_layers() {
        assert!(NetworkConfig::new(1, vec![], 1, Activation::Relu, PriorFamily::Gaussian).is_err());
        assert!(NetworkConfig::new(1, vec![0], 1, Activation::Relu, PriorFamily::Gaussian).is_err());
    }

    #[test]
    fn dataset_requires_rows() {
        let x = Array2::<f64>::zeros((0, 1));
        let y = Array2::<f64>::zeros((0, 1));
        assert!(Dataset::new(x, y).is_err());
        let x = Array2::<f64>::zeros((2, 1));
        let y = Array2::<f64>::zeros((3, 1));
        assert!(Dataset::new(x, y).is_err());
    }

    #[test]
    fn pack_rejects_wrong_shapes() {
        let cfg = NetworkConfig::single_layer(3, Activation::Relu, PriorFamily::Gaussian);
        let mut p = ParamVector::zeros(&cfg).unpack(&cfg).unwrap();
        p.weights[0] = Array2::zeros((2, 1));
        assert!(matches!(
            ParamVector::pack(&cfg, &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(
            widths in proptest::collection::vec(1usize..6, 1..4),
            input in 1usize..4,
            output in 1usize..3,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let cfg = NetworkConfig::new(input, widths, output, Activation::Sigmoid, PriorFamily::StudentT).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..cfg.param_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v = ParamVector::from_values(&cfg, values).unwrap();
            let back = ParamVector::pack(&cfg, &v.unpack(&cfg).unwrap()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
