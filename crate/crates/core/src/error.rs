use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model or input: {0}")]
    Validation(String),

    #[error("singular matrix while {context}; add regularization or more data")]
    SingularMatrix { context: String },

    #[error("enumeration of {count} deterministic policies exceeds the cap of {cap}")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("episode budget of {cap} exhausted after {used} episodes")]
    BudgetExhausted { cap: u64, used: u64 },

    #[error("coverage target unsatisfiable: {0}")]
    Unsatisfiable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
