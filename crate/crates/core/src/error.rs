use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An off-diagonal generator rate is negative.
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    /// A generator row does not sum to zero.
    RowSumNonzero { row: usize, sum: f64 },
    /// Array dimensions disagree with each other.
    DimensionMismatch(String),
    /// Data outside the standing assumptions (positive temporary impact, bounded coefficients).
    AssumptionViolated(String),
    /// Time outside `[0, T]`.
    OutOfHorizon { t: f64 },
    /// Time outside the span covered by a solution grid.
    OutOfGrid { t: f64 },
    /// Argument outside the domain of a closed-form expression.
    DomainError(String),
    /// Violated precondition on an argument (non-increasing ladder, too few levels, ...).
    InvalidArgument(String),
    /// Step-halving check still above tolerance after maximal refinement.
    ToleranceFailure { t: f64, discrepancy: f64 },
    /// Ladder solutions are not ordered in the penalization level.
    MonotonicityViolation { lower_level: f64, upper_level: f64, regime: usize, node: usize, excess: f64 },
    /// The `1/L` extrapolation ansatz does not describe the ladder at a node.
    FitDiverged { regime: usize, node: usize, residual: f64, gap: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NegativeOffDiagonal { row, col, value } => {
                write!(f, "negative off-diagonal rate q[{row}][{col}] = {value}")
            }
            Error::RowSumNonzero { row, sum } => write!(f, "generator row {row} sums to {sum}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::AssumptionViolated(msg) => write!(f, "assumption violated: {msg}"),
            Error::OutOfHorizon { t } => write!(f, "time {t} outside the horizon"),
            Error::OutOfGrid { t } => write!(f, "time {t} outside the solution grid"),
            Error::DomainError(msg) => write!(f, "domain error: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ToleranceFailure { t, discrepancy } => {
                write!(f, "step-halving discrepancy {discrepancy:e} at t = {t} after maximal refinement")
            }
            Error::MonotonicityViolation { lower_level, upper_level, regime, node, excess } => write!(
                f,
                "ladder not monotone: Y at L = {lower_level} exceeds L = {upper_level} by {excess:e} (regime {regime}, node {node})"
            ),
            Error::FitDiverged { regime, node, residual, gap } => write!(
                f,
                "extrapolation fit diverged at regime {regime}, node {node}: residual {residual:e} vs gap {gap:e}"
            ),
        }
    }
}

impl core::error::Error for Error {}
