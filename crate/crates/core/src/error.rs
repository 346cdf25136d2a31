use thiserror::Error;

/// Errors surfaced by the simulation core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate channel name `{0}`")]
    DuplicateChannel(String),
    #[error("invalid channel spec `{name}`: {reason}")]
    InvalidChannel { name: String, reason: String },
    #[error("invalid grid dimensions {width}x{height}: both sides must be >= 4")]
    InvalidDimensions { width: usize, height: usize },
    #[error("substrate has no channel `{0}`")]
    MissingChannel(String),
    #[error("genome pool is full: all {0} slots are live")]
    PoolFull(usize),
    #[error("requested {requested} organisms but pool capacity is {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },
    #[error("field side {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("{path} {msg}")]
    Config { path: String, msg: String },
    #[error("snapshot format error: {0}")]
    Snapshot(String),
    #[error("corrupt state: {0}")]
    CorruptState(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
