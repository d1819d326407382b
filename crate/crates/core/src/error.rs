use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters or configuration supplied by the caller.
    Usage,
    /// Malformed, missing or degenerate input data.
    Data,
    /// Numerical failure or training breakdown.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("recording has no seizure-onset annotation")]
    MissingAnnotation,
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("unstable autoregressive process: spectral radius {radius:.4} >= 1")]
    Unstable { radius: f64 },
    #[error("singular regression: {0}")]
    Singular(String),
    #[error("ill-conditioned transfer matrix at {freq} Hz (condition number {condition:.3e})")]
    IllConditioned { freq: f64, condition: f64 },
    #[error("frequency band {0} contains no grid frequencies")]
    EmptyBand(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("spectral dimension mismatch: {0} vs {1}")]
    SpectralDimension(usize, usize),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("cannot stratify: {0}")]
    Stratification(String),
    #[error("undefined AUC: labels contain a single class")]
    UndefinedAuc,
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Unstable { .. }
            | Error::Singular(_)
            | Error::IllConditioned { .. }
            | Error::Numeric(_)
            | Error::Training(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
