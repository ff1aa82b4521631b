use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("reduced dynamics only support XX coupling (kappa = 0), got kappa = {0}")]
    UnsupportedCoupling(f64),

    #[error("network too large for the full-space builder: N = {n}, limit {max}")]
    TooLarge { n: usize, max: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("degenerate spectrum: cluster {cluster} has multiplicity {multiplicity}")]
    Degenerate { cluster: usize, multiplicity: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dephasing rates are all zero and cannot be normalized")]
    AllZeroRates,

    #[error("sampling budget exhausted: {accepted} of {requested} accepted after {candidates} candidates")]
    SamplingBudget {
        requested: usize,
        accepted: usize,
        candidates: u64,
    },

    #[error("asymptotic error {0:e} too small for a logarithmic sensitivity")]
    VanishingError(f64),

    #[error("zero variance in correlation input")]
    ZeroVariance,
}

impl Error {
    /// Failures caused by the numerics of a valid input (degeneracy, budgets,
    /// vanishing denominators) rather than by malformed data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate { .. }
                | Error::SamplingBudget { .. }
                | Error::VanishingError(_)
                | Error::ZeroVariance
        )
    }
}
