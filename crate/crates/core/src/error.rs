use alloc::string::String;

use crate::grammar::FormatError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("unknown token name `{0}`")]
    UnknownTokenName(String),
    #[error("invalid answer `{0}`")]
    InvalidAnswer(String),
    #[error("parameter dimensions {found} do not match expected {expected}")]
    DimensionMismatch { expected: String, found: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("non-finite objective at update {update}: {detail}")]
    NonFinite { update: usize, detail: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("requested {requested} items but only {available} are available")]
    TooFew { requested: usize, available: usize },
    #[error("judge failure: {0}")]
    Judge(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
