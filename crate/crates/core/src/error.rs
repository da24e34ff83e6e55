use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// A quantity that should never vanish did (e.g. a zero denominator).
    #[error("numerical anomaly: {0}")]
    Anomaly(String),
    #[error("cone invariance violated: {0}")]
    ConeViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Io(_) | Error::Json(_) => 1,
            Error::Anomaly(_) => 2,
            Error::ConeViolation(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
