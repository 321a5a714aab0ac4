//! Conditional laws, conditional expectations and martingales for multivariate
//! default systems under the density hypothesis.

pub mod cli;
pub mod conditional;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod martingale;
pub mod model;
pub mod oracle;
pub mod prediction;

pub use error::{Error, Result};
