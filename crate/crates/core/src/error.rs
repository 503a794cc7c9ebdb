use thiserror::Error;

use crate::domain::TokenId;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("token id {id} is out of range for a vocabulary of size {size}")]
    InvalidToken { id: TokenId, size: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("design matrix is rank deficient at column {column:?}")]
    RankDeficient { column: String },

    #[error("missing metric values: {}", .0.join(", "))]
    MissingMetrics(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by bad configuration or inputs rather than a
    /// failure during a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Usage(_)
                | Error::UnknownToken(_)
                | Error::InvalidToken { .. }
                | Error::Shape(_)
                | Error::Json(_)
                | Error::MissingMetrics(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
