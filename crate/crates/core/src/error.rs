use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot parse rational from {0:?}")]
    ParseRational(String),

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("alphabets do not match: {0}")]
    AlphabetMismatch(String),

    #[error("randomization value {0} is outside (0, 1]")]
    UnitOutOfRange(String),

    #[error("conditioning symbol {0} has zero mass")]
    ZeroMassCondition(usize),

    #[error("degenerate conditioning: {0}")]
    DegenerateCondition(String),

    #[error("state space too large for exact computation: {size} > {limit}")]
    SizeGuard { size: u128, limit: u128 },

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("missing table: {0}")]
    MissingTable(String),
}
