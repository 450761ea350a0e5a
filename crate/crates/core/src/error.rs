use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at record {index}: {message}")]
    Parse { index: usize, message: String },

    #[error("value {value} at index {index} is outside (0, 0.5]")]
    OutOfRange { index: usize, value: f64 },

    #[error("profile is empty")]
    EmptyProfile,

    #[error("profile is not sorted ascending (index {0})")]
    Unsorted(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("repetition count {0} is not odd")]
    EvenRepetition(u32),

    #[error("probability {0} is outside the admissible range")]
    InvalidProbability(f64),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("degenerate regime: {0}")]
    Degenerate(String),

    #[error("invalid codebook constraints: {0}")]
    InvalidConstraints(String),

    #[error("rate table has no entry for k={k}, r={rate}")]
    TableGap { k: usize, rate: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid config: {0}")]
    Config(String),
}
