use thiserror::Error;

use crate::model::NodeId;

/// Errors raised by model construction and the computational modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("negative density {value} at t={t}, node={node}, point={point:?}")]
    NegativeDensity {
        t: usize,
        node: NodeId,
        point: Vec<f64>,
        value: f64,
    },

    #[error("reference grid is empty")]
    EmptyGrid,

    #[error("invalid reference measure: {0}")]
    InvalidReference(String),

    #[error("invalid scenario tree: {0}")]
    InvalidTree(String),

    #[error("invalid density model: {0}")]
    InvalidModel(String),

    #[error("model has not passed validation")]
    NotValidated,

    #[error("observation scheme `{scheme}` is incompatible with the model: {reason}")]
    IncompatibleScheme { scheme: String, reason: String },

    #[error("operation requires a finite-grid reference measure")]
    UnsupportedReference,

    #[error("time {t} is outside the model horizon 0..={horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("invalid realization: {0}")]
    InvalidRealization(String),

    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("payoff has no value at support point (node {node}, grid index {index})")]
    MissingPayoff { node: NodeId, index: usize },

    #[error("candidate is not adapted at t={t}, node={node}: values {a} and {b} inside one observation atom")]
    NotAdapted { t: usize, node: NodeId, a: f64, b: f64 },

    #[error("negative candidate value {value} at t={t}, node={node}")]
    NegativeCandidate { t: usize, node: NodeId, value: f64 },

    #[error("input is not an F-martingale: {0}")]
    NotAMartingale(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
