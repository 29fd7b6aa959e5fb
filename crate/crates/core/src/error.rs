use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the relation is defined.
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    /// A parameter record violates one of its invariants.
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: String, reason: String },

    /// Input data cannot support the requested estimate.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Cross-references between state records are broken.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A state variable became NaN or infinite during integration.
    #[error("non-finite {quantity} for product {product} at step {step}")]
    NonFinite {
        quantity: &'static str,
        product: u64,
        step: u64,
    },

    #[error("step size {dt} exceeds stability bound {bound}")]
    Stability { dt: f64, bound: f64 },

    #[error("scenario parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("scenario validation error: {0}")]
    Validation(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("verification mismatch: {0}")]
    Verification(String),
}

impl Error {
    pub(crate) fn domain(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
