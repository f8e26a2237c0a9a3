use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DrawSource {
    #[serde(rename = "HMC")]
    Hmc,
    #[serde(rename = "VI")]
    Vi,
}

/// `S x P` matrix of posterior draws, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Array2<f64>,
    pub source: DrawSource,
    /// Chain index of every row.
    pub chain_ids: Vec<usize>,
    pub diagnostics: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

impl PosteriorDraws {
    pub fn new(draws: Array2<f64>, source: DrawSource) -> Result<Self> {
        if draws.nrows() == 0 {
            return Err(Error::InvalidArgument("posterior draws are empty".into()));
        }
        if draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("posterior draw"));
        }
        let chain_ids = vec![0; draws.nrows()];
        Ok(PosteriorDraws {
            draws,
            source,
            chain_ids,
            diagnostics: BTreeMap::new(),
            wall_time_s: 0.0,
        })
    }

    pub fn num_draws(&self) -> usize {
        self.draws.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.draws.ncols()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let row = self.draws.row(s);
        row.to_slice().expect("draw matrix is row-major")
    }

    /// Draws grouped per chain, as `chains[c][param][iteration]`.
    pub fn by_chain(&self) -> Vec<Vec<Vec<f64>>> {
        let n_chains = self.chain_ids.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = vec![vec![Vec::new(); self.num_params()]; n_chains];
        for (s, &c) in self.chain_ids.iter().enumerate() {
            for (p, &v) in self.draws.row(s).iter().enumerate() {
                out[c][p].push(v);
            }
        }
        out
    }
}
