use std::io;

use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} is not divisible by {books} codebooks")]
    NonDivisible { dim: usize, books: usize },
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("invalid code: {0}")]
    BadCode(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("row {row} is not a probability vector")]
    BadDistribution { row: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownToken { id: u16, vocab: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("gradients require the soft relaxation (hard = false)")]
    HardModeGradient,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("document has no tokens")]
    EmptyDoc,
    #[error("document {0} not found")]
    MissingDoc(u64),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("packed length mismatch: expected {expected} bytes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no evaluable queries")]
    EmptyRun,
    #[error("rankings are not permutations of the same id set")]
    NotPermutation,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("teacher and student runs cover different query/document sets")]
    MismatchedSets,
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
