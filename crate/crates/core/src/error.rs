use std::fmt;

use thiserror::Error;

use crate::optimal::CenterState;

/// The constraint block of the feasible region that failed a definiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// `M - D`
    Lower,
    /// `kappa * D - M`
    Upper,
    /// `D` itself
    Diagonal,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Lower => write!(f, "M - D"),
            Block::Upper => write!(f, "kappa*D - M"),
            Block::Diagonal => write!(f, "D"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("matrix is numerically singular")]
    SingularMatrix,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("column {0} has zero variance")]
    DegenerateColumn(usize),
    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),
    #[error("point is not strictly interior: {0} is not positive definite")]
    Infeasible(Block),
    #[error("no convergence after {iterations} Newton steps (gradient norm {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        best: Box<CenterState>,
    },
    #[error("proximity {0} is outside the quadratic convergence region")]
    OutOfRegion(f64),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("kappa step leaves the feasible region")]
    StepTooLarge,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("sampled design matrix is rank deficient after retries")]
    SingularSample,
    #[error("iteration diverged")]
    Diverged,
    #[error("method cannot be applied to this matrix: {0}")]
    InvalidMethodForMatrix(String),
    #[error("line search stalled")]
    LineSearchStall,
    #[error("hypothesis failed: kappa after scaling {scaled} exceeds kappa before {unscaled}")]
    HypothesisFailed { scaled: f64, unscaled: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Variant name, used in CLI diagnostics.
    pub fn variant(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "InvalidMatrix",
            Error::SingularMatrix => "SingularMatrix",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DegenerateColumn(_) => "DegenerateColumn",
            Error::DegenerateMatrix(_) => "DegenerateMatrix",
            Error::Infeasible(_) => "Infeasible",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::OutOfRegion(_) => "OutOfRegion",
            Error::NumericalBreakdown(_) => "NumericalBreakdown",
            Error::StepTooLarge => "StepTooLarge",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::SingularSample => "SingularSample",
            Error::Diverged => "Diverged",
            Error::InvalidMethodForMatrix(_) => "InvalidMethodForMatrix",
            Error::LineSearchStall => "LineSearchStall",
            Error::HypothesisFailed { .. } => "HypothesisFailed",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }

    /// True for errors that come from reading or parsing inputs rather than
    /// from the numerics.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Parse(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
