use thiserror::Error;

/// Errors raised by the calibration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("singular matrix: {0}")]
    Singular(&'static str),
    #[error("rotation projection is degenerate (rank < 2)")]
    DegenerateProjection,
    #[error("rank deficient: {found} near-zero eigenvalues where exactly one was expected")]
    RankDeficient { found: usize },
    #[error("fitted quadric is not an ellipsoid (matrix not positive definite)")]
    IndefiniteQuadric,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("innovation covariance is not invertible")]
    InnovationConditioning,
    #[error("magnetic vector estimate is degenerate (norm {0:e})")]
    DegenerateMagneticVector(f64),
    #[error("time {t} s lies outside the stream range [{start}, {end}] s")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("timestamps not increasing at line {line}")]
    NonMonotoneTime { line: usize },
    #[error("missing unit declaration for {0}")]
    MissingUnit(&'static str),
    #[error("motion detected in stationary window (std {std_dps:.3} deg/s)")]
    MotionInWindow { std_dps: f64 },
    #[error("series are misaligned: {0}")]
    Misaligned(String),
    #[error("not observable: {0}")]
    Unobservable(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
