use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped by the layer that raises them; the CLI maps each
/// variant onto a configuration or data exit code via [`Error::is_config_error`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // dataset validation
    #[error("sample {index} has {found} features, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {index} has a=1 with t=0, which one-sided non-adherence forbids")]
    OneSidedViolation { index: usize },
    #[error("sample {index} has outcome {value}, but the dataset is flagged binary")]
    NonBinaryOutcome { index: usize, value: f64 },
    #[error("true CATEA has length {found}, expected {expected}")]
    TruthLengthMismatch { expected: usize, found: usize },
    #[error("dataset has no ground-truth CATEA")]
    MissingTruth,

    // adjustment formulas
    #[error("propensity {0} is outside (0, 1)")]
    InvalidPropensity(f64),
    #[error("one-sided formula requires A(0) = 0, got {0}")]
    OneSidedContract(f64),

    // single-stratum estimation
    #[error("stratum has no records")]
    EmptyStratum,
    #[error("stratum lacks one of the assignment arms")]
    MissingAssignmentArm,
    #[error("no records in cell (a={a}, t={t})")]
    EmptyCell { a: u8, t: u8 },
    #[error("population has zero positivity margin")]
    DegeneratePopulation,
    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    // closed-form theory
    #[error("cell (a={a}, t={t}) has zero probability")]
    ZeroCell { a: u8, t: u8 },
    #[error("rho {0} is outside the admissible range")]
    InvalidRho(f64),
    #[error("equal-variance precondition fails: {0}")]
    UnequalVariances(String),
    #[error("mean {0} is outside [0, 1]")]
    OutOfRange(f64),

    // data generation
    #[error("need {required} non-adherers but only {available} eligible individuals")]
    InsufficientEligible { required: usize, available: usize },

    // networks and learners
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training or validation data is empty")]
    EmptyData,
    #[error("no training samples with a={a}, t={t}")]
    EmptyConditioningSet { a: u8, t: u8 },
    #[error("learner has not been fitted")]
    NotFitted,

    // harness
    #[error("estimate and truth lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Whether the error stems from user configuration rather than data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidRho(_)
                | Error::InvalidPopulation(_)
                | Error::DegeneratePopulation
                | Error::UnequalVariances(_)
                | Error::OutOfRange(_)
                | Error::Parse(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
