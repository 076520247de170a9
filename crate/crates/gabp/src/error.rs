use crate::model::io::LoadError;
use crate::model::{GenerateError, NodeId, ValidationReport};
use crate::numerics::NumericsError;
use thiserror::Error;

/// Crate-wide error type. Operations return errors; panics are reserved for
/// constructor misuse and internal invariant breaks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model failed validation:\n{0}")]
    InvalidModel(ValidationReport),

    #[error("operation requires a {expected} model")]
    WrongModelKind { expected: &'static str },

    #[error("invalid engine configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("initial message info for ({from} -> {to}) is not positive semidefinite")]
    InitInfoNotPsd { from: NodeId, to: NodeId },

    #[error("initial message for ({from} -> {to}) has wrong dimension (expected {expected})")]
    InitShapeMismatch {
        from: NodeId,
        to: NodeId,
        expected: usize,
    },

    #[error("no {what} message stored for ({from} -> {to})")]
    MissingMessage {
        what: &'static str,
        from: NodeId,
        to: NodeId,
    },

    #[error("nodes {a} and {b} do not share an edge")]
    UnknownEdge { a: NodeId, b: NodeId },

    #[error("numerical failure at {context}: {source}")]
    Numerical {
        context: String,
        source: NumericsError,
    },

    #[error("belief undefined at node {node} in iteration {iteration}")]
    BeliefUndefined { node: NodeId, iteration: usize },

    #[error(
        "fixed point not certified: residual {residual:.3e} after {iterations} iterations"
    )]
    FixedPointNotCertified { residual: f64, iterations: usize },

    #[error("node {node} attempted non-local access to {requested}")]
    NonLocalAccess { node: NodeId, requested: String },

    #[error("node {from} attempted to send to non-neighbor {to}")]
    NonLocalSend { from: NodeId, to: NodeId },

    #[error("malformed {kind} payload on ({from} -> {to})")]
    MalformedPayload {
        kind: &'static str,
        from: NodeId,
        to: NodeId,
    },

    #[error("simulation phase order invalid: {0}")]
    PhaseOrder(&'static str),

    #[error("problem dimension {dimension} exceeds the dense envelope (limit {limit})")]
    TooLarge { dimension: usize, limit: usize },

    #[error(transparent)]
    Generate(#[from] GenerateError),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attaches human-readable context (edge, iteration) to a kernel error.
    pub(crate) fn numerical(context: impl Into<String>, source: NumericsError) -> Self {
        Error::Numerical {
            context: context.into(),
            source,
        }
    }
}
