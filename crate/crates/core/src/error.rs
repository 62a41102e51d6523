use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected} modes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The explicit advection part outran the grid. This is a property of the
    /// discretization, not a blow-up of the equation itself.
    #[error("CFL violation at t = {time}: max|u| = {max_abs} exceeds {limit}")]
    Cfl { time: f64, max_abs: f64, limit: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("ensemble member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("snapshot checksum mismatch")]
    Checksum,

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
