use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Per-start outcome carried by [`Error::AllStartsFailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct StartFailure {
    pub start_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("I + delta X is not orientation preserving (det = {det})")]
    OrientationReversing { det: f64 },
    #[error("grid with {nodes} nodes exceeds the cap of {cap}")]
    GridTooLarge { nodes: usize, cap: usize },
    #[error("matrix lattice with {points} points exceeds the cap of {cap}")]
    LatticeTooLarge { points: usize, cap: usize },
    #[error("abscissae must be strictly increasing")]
    Unsorted,
    #[error("all {} starts failed", .0.len())]
    AllStartsFailed(Vec<StartFailure>),
    #[error("degenerate field: {0}")]
    Degenerate(&'static str),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
