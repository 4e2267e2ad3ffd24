use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at gene '{gene}', column '{column}': {reason}")]
    Ingestion {
        gene: String,
        column: String,
        reason: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("algorithm error: {0}")]
    Algorithm(String),

    /// pFDR is only defined conditionally on at least one discovery.
    #[error("pFDR undefined: no discoveries")]
    NoDiscoveries,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
