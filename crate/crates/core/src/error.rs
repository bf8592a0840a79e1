use thiserror::Error;

/// Failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("numerical degeneracy: {0}")]
    Degeneracy(String),

    #[error("sampler failed at iteration {iteration}: {source}")]
    Sweep {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Unsupported(_) | Error::InvalidHyperparameter(_) => {
                ErrorClass::Config
            }
            Error::Data(_) => ErrorClass::Data,
            Error::Io { .. } => ErrorClass::Io,
            Error::Sweep { source, .. } => source.class(),
            Error::InvalidParameter(_)
            | Error::DimensionMismatch(_)
            | Error::Decomposition(_)
            | Error::Degeneracy(_) => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
