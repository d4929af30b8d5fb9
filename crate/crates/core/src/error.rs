//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for all fallible operations in this crate.
#[derive(Debug, Error)]
pub enum UcslError {
    /// A configuration value violates its documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An input violates a documented precondition (e.g. non-stochastic rows).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A loss or intermediate quantity became non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Fewer samples than clusters, or an otherwise unusable sample set.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// Clustering collapsed (empty cluster, coincident centroids).
    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    /// Centroid matching could not produce a bijection.
    #[error("re-identification failed: {0}")]
    Reident(String),

    /// A metric is undefined for the given inputs (empty class, zero margin).
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// File or stream parsing failed; carries a 1-based line number when known.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UcslError>;
