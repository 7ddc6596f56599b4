use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to print a one-line
/// diagnosis; numerical guards are distinct from validation failures so a
/// front end can map them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("expansion fit failed: {0}")]
    FitFailed(String),

    #[error("kernel has no finite exponential moments")]
    NotExpBounded,

    #[error("grid extent too small: {0}")]
    ExtentTooSmall(String),

    #[error("window overflow: {0}")]
    Overflow(String),

    #[error("value underflowed its trust floor: {0}")]
    Underflow(String),

    #[error("bound not applicable in this regime: {0}")]
    WrongRegime(String),

    #[error("tail level {level} is below the regime threshold {threshold}")]
    BelowThreshold { level: f64, threshold: f64 },

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("incompatible levels: {0}")]
    BadLevels(String),

    #[error("time step violates the monotonicity bound: dt must be <= {max_dt}, got {dt}")]
    CflViolation { dt: f64, max_dt: f64 },

    #[error("plateau half-width {half_width} exceeds {limit} (80% of grid extent)")]
    PlateauTooWide { half_width: f64, limit: f64 },

    #[error("no crossing of level {0} on the grid")]
    NoCrossing(f64),

    #[error("no coherent traveling front: {0}")]
    NoWave(String),

    #[error("sub-solution construction failed: {0}")]
    ConstructionFailed(String),

    #[error("no propagating half-width found up to {0}")]
    NoPropagationFound(f64),

    #[error("criterion vacuous on the searchable range: {0}")]
    CriterionVacuous(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for guards that fire on sound inputs when a numerical resource
    /// (grid, window, floating-point range) is exhausted.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::ExtentTooSmall(_)
                | Error::Overflow(_)
                | Error::Underflow(_)
                | Error::CflViolation { .. }
                | Error::PlateauTooWide { .. }
                | Error::NoPropagationFound(_)
                | Error::CriterionVacuous(_)
                | Error::NoWave(_)
                | Error::ConstructionFailed(_)
        )
    }
}
