use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum CimError {
    /// A value outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// An AMU operation invoked out of phase order.
    #[error("phase error: expected {expected}, found {found}")]
    Phase {
        expected: &'static str,
        found: &'static str,
    },
    /// Inconsistent or unsupported configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Mismatched tensor or layer dimensions.
    #[error("shape error: {0}")]
    Shape(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),
    /// An internal invariant did not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, CimError>;

impl CimError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CimError::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CimError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        CimError::Shape(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
