//! Error type shared by every stage of the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The design matrix is malformed or rank deficient.
    #[error("design error: {0}")]
    Design(String),

    /// IRLS (or the dispersion alternation) hit its iteration cap.
    #[error("no convergence after {iterations} iterations (last relative deviance change {last_change:e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        last_beta: Vec<f64>,
    },

    /// Response carries no information (e.g. every count is zero).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("size factor error: {0}")]
    SizeFactor(String),

    /// A triangular factor is too close to singular to invert.
    #[error("ill-conditioned factor: {0}")]
    Conditioning(String),

    /// The candidate vector lies (numerically) in the column space of the design.
    #[error("treatment vector is collinear with the design")]
    Collinear,

    /// A binary treatment has no ones or no zeros.
    #[error("degenerate treatment: {0}")]
    DegenerateTreatment(String),

    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
