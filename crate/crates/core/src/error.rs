use thiserror::Error;

/// Errors raised while validating inputs or building and solving programs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("block-tie residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    BlockTie { residual: f64, tolerance: f64 },

    #[error("invalid uncertainty region: {0}")]
    InvalidRegion(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("uncertain parameters enter the bound side of the cone constraint")]
    UncertainBound,

    #[error("exact robust counterpart not available: {0}")]
    ExactUnsupported(String),

    #[error("malformed conic program: {0}")]
    Program(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
