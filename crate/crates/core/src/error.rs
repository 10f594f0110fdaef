//! Error type shared by every module in the crate.

use thiserror::Error;

use crate::glmm::FittedGlmm;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("bad value at line {row}: {reason}")]
    BadValue { row: usize, reason: String },

    #[error("input file contains no data rows")]
    EmptyFile,

    #[error("stratum {0} has no sampled units")]
    EmptyStratum(usize),

    #[error("cell (stratum {h}, time {t}) has no sampled units")]
    EmptyCell { h: usize, t: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("too many knots: requested {requested} but only {distinct} distinct values")]
    TooManyKnots { requested: usize, distinct: usize },

    #[error("spline penalty matrix is numerically singular")]
    SingularPenalty,

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("fit did not converge within {iterations} iterations")]
    NotConverged {
        iterations: usize,
        /// Last iterate, so callers can inspect or retry from it.
        last: Box<FittedGlmm>,
    },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("all strata trimmed at w0 = {0}; trimming normalizer is undefined")]
    AllTrimmed(f64),

    #[error("trimmed strata absorb the whole sample; trimming normalizer would be negative")]
    NegativeGamma,

    #[error("stratum {h} oversampled: n = {n} exceeds N = {cap}")]
    OversampledStratum { h: usize, n: u64, cap: u64 },

    #[error("point estimate {0} lies outside (0, 1); logit-scale interval is undefined")]
    DegeneratePoint(f64),

    #[error("insufficient replicates: {0}")]
    InsufficientReplicates(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error kind, used by the CLI's
    /// JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::BadValue { .. } => "BadValue",
            Error::EmptyFile => "EmptyFile",
            Error::EmptyStratum(_) => "EmptyStratum",
            Error::EmptyCell { .. } => "EmptyCell",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::TooManyKnots { .. } => "TooManyKnots",
            Error::SingularPenalty => "SingularPenalty",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::NotConverged { .. } => "NotConverged",
            Error::NumericalBreakdown(_) => "NumericalBreakdown",
            Error::AllTrimmed(_) => "AllTrimmed",
            Error::NegativeGamma => "NegativeGamma",
            Error::OversampledStratum { .. } => "OversampledStratum",
            Error::DegeneratePoint(_) => "DegeneratePoint",
            Error::InsufficientReplicates(_) => "InsufficientReplicates",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
        }
    }
}
