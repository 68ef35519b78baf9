use thiserror::Error;

/// Errors raised by model construction, propagation and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator couples sectors: entry ({row}, {col}) = {value} leaves the sector with {n_up} up spins")]
    CrossSectorEntry {
        row: usize,
        col: usize,
        value: f64,
        n_up: u32,
    },

    #[error("spectral bound estimate did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("expansion order {required} exceeds the configured cap {cap}")]
    OrderTooLarge { required: usize, cap: usize },

    #[error("non-finite amplitude encountered at step {step}")]
    NonFinite { step: usize },

    #[error("norm drift {drift:e} exceeds tolerance at t = {time}")]
    NormDrift { drift: f64, time: f64 },

    #[error("energy window is empty (filtered norm {norm:e})")]
    EmptyWindow { norm: f64 },

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("dimension {dim} exceeds the exact-diagonalization cap {cap}")]
    OverCap { dim: usize, cap: usize },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("no crossing of {threshold}; nearest point lambda = {nearest_lambda} with value {nearest_value}")]
    NoCrossing {
        threshold: f64,
        nearest_lambda: f64,
        nearest_value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors caused by the run description rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidLattice(_)
                | Error::InvalidParameter(_)
                | Error::OverCap { .. }
                | Error::EmptyWindow { .. }
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
