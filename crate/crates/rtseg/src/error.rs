use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the failure class the CLI
/// maps to exit codes: config/usage (1), data (2), numeric (3).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or module wiring (bad field values, dimension
    /// constraints between modules, unknown config keys).
    #[error("config error: {0}")]
    Config(String),

    /// Shape disagreement between tensors or between an input and the
    /// configured model geometry.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed or out-of-contract data (missing files, bad label ids,
    /// mismatched rasters).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or other numeric contract violations.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
