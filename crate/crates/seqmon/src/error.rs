//! Crate-wide error type.
//!
//! Variants are grouped so the command-line layer can map them onto process
//! exit codes: configuration and argument problems, I/O failures, data-driven
//! conditions (bad rows, degenerate states, contract violations triggered by
//! inputs), and checkpoint problems.

use thiserror::Error;

/// Errors produced by monitors, estimators, and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid constructor or configuration parameter.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// An input that must be finite was NaN or infinite.
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },

    /// Covariate outside the basis support beyond the clamp tolerance.
    #[error("covariate {value} outside support [{lo}, {hi}] in dimension {dim}")]
    OutsideSupport {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Vector or matrix extent does not match the expected dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A stage operation ran before `refresh_coefficients` for that stage.
    #[error("coefficients are stale: refresh required after the stage ingest pass")]
    StaleCoefficients,

    /// Interim analysis requested on a monitor that has already rejected.
    #[error("monitor already terminated")]
    MonitorTerminated,

    /// Every grid point had zero standard error.
    #[error("degenerate variance: all grid points have zero standard error")]
    DegenerateVariance,

    /// The bootstrap survivor set is empty.
    #[error("empty bootstrap survivor set")]
    EmptySurvivors,

    /// Matrix expected to be symmetric within tolerance.
    #[error("matrix not symmetric: relative asymmetry {0:e}")]
    NotSymmetric(f64),

    /// Matrix has an eigenvalue below the positive-semidefinite tolerance.
    #[error("matrix not positive semidefinite: eigenvalue {0:e}")]
    NotPositiveSemidefinite(f64),

    /// Paired monitors were fed different data streams.
    #[error("stream mismatch at stage {stage}: {n_pos} vs {n_neg} samples")]
    StreamMismatch { stage: u64, n_pos: u64, n_neg: u64 },

    /// A stage batch larger than the cumulative sample count.
    #[error("stage batch ({m}) exceeds cumulative sample count ({n})")]
    BatchExceedsTotal { m: u64, n: u64 },

    /// Not enough data for the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Malformed row in an observation log.
    #[error("line {line}: {msg}")]
    Data { line: u64, msg: String },

    /// Configuration file or argument error.
    #[error("config: {0}")]
    Config(String),

    /// Checkpoint parse, version, or serialization error.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line interface.
    ///
    /// 2 = configuration/argument error, 3 = I/O error, 4 = data error
    /// (malformed rows, degenerate or inconsistent streams), 5 = checkpoint
    /// error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParam(_) => 2,
            Error::Io(_) => 3,
            Error::Checkpoint(_) => 5,
            _ => 4,
        }
    }
}
