use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad shape, index, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Linear algebra or floating-point failure the jitter policy could not absorb.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A column or summary carries no variation.
    #[error("degenerate variable `{0}`: zero variance")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema version mismatch for {artifact}: found {found}, expected {expected}")]
    SchemaVersion {
        artifact: String,
        found: u32,
        expected: u32,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            Error::Contract(_) | Error::Degenerate(_) | Error::SchemaVersion { .. } => 2,
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
        }
    }
}
