use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// The recency-assay model implies a probability of testing recent at or above one.
    #[error("infeasible recency scenario: probability of testing recent is {prob_recent:.6}")]
    InfeasibleScenario { prob_recent: f64 },

    /// No trial size reaches the target power; `limiting_power` is the bound as N grows without limit.
    #[error("infeasible design: power is bounded by {limiting_power:.6} as the trial grows")]
    Infeasible { limiting_power: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
