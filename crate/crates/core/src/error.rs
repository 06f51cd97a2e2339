use thiserror::Error;

/// Failures reported by the numerical routines.
///
/// Validation problems (bad parameters, unmet preconditions) are kept apart
/// from numerical-contract failures so the CLI can map them to distinct exit
/// codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("frequency is resonant: |k|^tau dist(<k,w>, pi Z) = {margin} at k = {k:?}")]
    Resonant { k: Vec<i64>, margin: f64 },
    #[error("small divisor {divisor:e} at k = {k:?} in step {step}")]
    SmallDivisor { step: usize, k: Vec<i64>, divisor: f64 },
    #[error("step {step}: rotated angle still resonant with k = {k:?}")]
    DoubleResonance { step: usize, k: Vec<i64> },
    #[error("eigensolver did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("numerical contract violated: {0}")]
    Contract(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of a numerical invariant, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SmallDivisor { .. }
                | Error::DoubleResonance { .. }
                | Error::NoConvergence(_)
                | Error::Contract(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
