use thiserror::Error;

/// Errors produced by the solvers and model constructors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RmdpError {
    #[error("singular matrix: pivot {pivot:e} below threshold at column {column}")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("iteration limit of {limit} reached (residual {residual:e})")]
    IterationLimit { limit: usize, residual: f64 },

    #[error("uncertainty set is empty")]
    EmptySet,

    #[error("problem too large for enumeration: {0}")]
    TooLarge(String),

    #[error("invalid box factors: lower {lower}, upper {upper}")]
    InvalidFactors { lower: f64, upper: f64 },

    #[error("overflow risk: exponent {exponent:.3} exceeds {limit} (rescale rewards or lower b)")]
    OverflowRisk { exponent: f64, limit: f64 },

    #[error("invalid epsilon {0}: must be positive")]
    InvalidEpsilon(f64),

    #[error("no convergence after {rounds} rounds (residual {residual:e}, gap {gap:e})")]
    NonConvergence { rounds: usize, residual: f64, gap: f64 },

    #[error("not a fixed point: residual {0:e}")]
    NotFixedPoint(f64),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("too few samples: {0} (need at least 3)")]
    TooFewSamples(usize),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl RmdpError {
    /// True for the failures a caller may retry with a larger budget.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            RmdpError::IterationLimit { .. } | RmdpError::NonConvergence { .. }
        )
    }

    /// True for errors caused by the input document rather than a solver.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            RmdpError::Parse { .. }
                | RmdpError::Io(_)
                | RmdpError::Validation(_)
                | RmdpError::InvalidFactors { .. }
                | RmdpError::InvalidEpsilon(_)
                | RmdpError::InvalidWeights(_)
                | RmdpError::EmptySet
        )
    }
}

pub type Result<T> = std::result::Result<T, RmdpError>;
