use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlexError {
    #[error("invalid route `{0}`: {1}")]
    InvalidRoute(String, String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("OD pair {0}->{1} is unreachable over the link graph")]
    UnreachableOd(String, String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative detour time {0} for request {1}")]
    NegativeDetour(f64, usize),
    #[error("boundary detour curve is not convex and non-increasing: {0}")]
    InvalidCurve(String),
    #[error("reliability {0} outside [0, 1)")]
    InvalidReliability(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("variable {0} is not binary")]
    NotBinary(String),
    #[error("big-M bound {bound} too small: activity reached {activity}")]
    BoundTooSmall { bound: f64, activity: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("phase-1 problem infeasible at the requested reliability")]
    InfeasibleAtReliability,
    #[error("enumeration of {0} deployments exceeds the cap of {1}")]
    EnumerationTooLarge(u128, u128),
    #[error("grid has {0} reliability components; at most {1} supported")]
    GridDimension(usize, usize),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FlexError>;
