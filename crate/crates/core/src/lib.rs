//! Bayesian feed-forward network regression.

pub mod assess;
pub mod combine;
pub mod data;
pub mod density;
pub mod draws;
pub mod error;
pub mod experiment;
pub mod hmc;
pub mod model;
pub mod predictive;
pub mod recipe;
pub mod stats;
pub mod vi;

pub use error::{Error, Result};
