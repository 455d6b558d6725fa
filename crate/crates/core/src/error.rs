use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library reports.
///
/// Validation problems (bad input, inconsistent shapes) are distinguished from
/// numerical failures through [`Error::is_numerical`], which the CLI maps to
/// separate exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("weight {index} is not positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    MassNotOne { sum: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("duplicate location at atoms {first} and {second}")]
    DuplicateLocation { first: usize, second: usize },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("grid too coarse: {nodes} nodes in the support of the time weight, need at least {required}")]
    GridTooCoarse { nodes: usize, required: usize },
    #[error("grid index {index} is on the boundary of a grid with {len} nodes")]
    BoundaryIndex { index: usize, len: usize },
    #[error("time grids do not match")]
    GridMismatch,
    #[error("field evaluation failed: {0}")]
    FieldEvaluationFailure(String),
    #[error("non-finite position at step {step}; the time step is too large")]
    StepTooLarge { step: usize },
    #[error("weight spectrum rejected between nodes {from} and {to}: {reason}")]
    SpectrumRejected { from: usize, to: usize, reason: String },
    #[error("matching infeasible: {0}")]
    MatchingInfeasible(String),
    #[error("the weight law is degenerate (a single weight vector)")]
    DegenerateLaw,
    #[error("generalized cylinder inner function does not factorize as f(x)*rho(r)")]
    NonFactorizedInner,
    #[error("bit string of length {len} is too short for level {level}")]
    InsufficientDepth { len: usize, level: usize },
    #[error("point is off the surface by {distance}")]
    OffSurface { distance: f64 },
    #[error("field is not tangent: normal component {normal}")]
    NonTangentField { normal: f64 },
    #[error("functional is not separable; exact heat value unavailable")]
    NonSeparableFn,
    #[error("weights are not strictly decreasing (tie at index {index})")]
    TiedWeights { index: usize },
    #[error("invalid base law: {0}")]
    InvalidBase(String),
    #[error("transport solver failed: {0}")]
    SolverFailure(String),
    #[error("format version {found:?} does not match {expected:?}")]
    FormatVersion { expected: String, found: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures that come from arithmetic rather than from invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepTooLarge { .. }
                | Error::FieldEvaluationFailure(_)
                | Error::SolverFailure(_)
                | Error::MatchingInfeasible(_)
                | Error::SpectrumRejected { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
