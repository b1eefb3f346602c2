use thiserror::Error;

/// Errors raised by model construction, simulation and the statistical layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("volatility matrix is not of full row rank at t={t} (singular value ratio {ratio:e})")]
    RankDeficient { t: f64, ratio: f64 },
    #[error("model assumption violated: {0}")]
    Assumption(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit status used by the command-line runner.
    ///
    /// 2: configuration / usage errors, 3: violated model assumptions,
    /// 4: numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownModel(_)
            | Error::InvalidParameter { .. }
            | Error::Dimension(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::RankDeficient { .. } | Error::Assumption(_) => 3,
            Error::NonFinite(_) | Error::InsufficientSamples { .. } | Error::Numerical(_) => 4,
        }
    }
}
