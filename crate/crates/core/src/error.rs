use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrismError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid numeric input: {0}")]
    Numeric(String),

    #[error("invalid probability vector: {0}")]
    Probability(String),

    #[error("path enumeration over {len} steps exceeds the oracle cap of {cap}")]
    OracleCap { len: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),

    #[error("token id {0} out of vocabulary")]
    TokenOutOfRange(usize),

    #[error("input length {len} exceeds the configured maximum {max}")]
    Overlength { len: usize, max: usize },

    #[error("malformed data: {0}")]
    Data(String),

    #[error("training diverged at step {step}: {diagnostic}")]
    Diverged { step: usize, diagnostic: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PrismError>;
