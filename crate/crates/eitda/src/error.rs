use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or arguments: wrong sizes, invalid parameter values,
    /// unresolvable paths. CLI maps this to exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file; message names the offending line where possible.
    #[error("parse error: {0}")]
    Parse(String),

    /// Numerical failure (factorization breakdown, non-finite values).
    /// CLI maps this to exit code 1.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Operation not defined for the given variant (e.g. single-site prior
    /// ratios under the convolution prior).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}
