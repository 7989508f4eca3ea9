//! Exact transient Age-of-Information (AoI) distributions for packet streams
//! whose delays are sampled from a monotone transform of a stationary Gaussian
//! process, with a Monte-Carlo simulator for cross-validation.

pub mod aoi;
pub mod error;
pub mod gauss;
pub mod grid;
pub mod numeric;
pub mod orthant;
pub mod outputs;
pub mod par;
pub mod simulator;

pub use error::{Error, Result};
