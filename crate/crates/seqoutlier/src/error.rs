use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("alphabet size mismatch: {0} vs {1}")]
    AlphabetMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("invalid subset: {0}")]
    InvalidSubset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no feasible point satisfies the constraints")]
    Infeasible,
    #[error("resource guard: {0}")]
    ResourceGuard(String),
}

pub(crate) fn out_of_range(msg: impl Into<String>) -> Error {
    Error::OutOfRange(msg.into())
}
