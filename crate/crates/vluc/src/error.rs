use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto exit codes, so every
/// failure mode the pipeline can hit should be representable here.
#[derive(Error, Debug)]
pub enum VlucError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),
}

impl VlucError {
    pub fn shape(msg: impl Into<String>) -> Self {
        VlucError::Shape(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        VlucError::Data(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, VlucError>;
