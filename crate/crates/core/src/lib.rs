//! Sequential Monte Carlo, marginal particle filters and variational filtering
//! objectives on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod coupling;
pub mod distributions;
pub mod error;
pub mod filters;
pub mod harness;
pub mod models;
pub mod objectives;
pub mod params;
pub mod rng;

pub use error::{Error, Result};
