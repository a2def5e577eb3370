//! Conditional simulation of stationary Gaussian random fields on regular
//! grids from irregularly located, noisy observations.

pub mod bessel;
pub mod condsim;
pub mod covariance;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod kriging;
pub mod linalg;
pub mod local;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};

/// A point in the plane, `[x, y]`.
pub type Location = [f64; 2];
