use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max |A - Aᵀ| = {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("basis is rank deficient (smallest pivot {pivot:.3e})")]
    RankDeficient { pivot: f64 },

    #[error("matrix is indefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("training diverged at step {step}: loss {loss:.6e}; {hint}")]
    Diverged { step: usize, loss: f64, hint: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("declared dimensions overflow addressable size: {0}")]
    Overflow(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
