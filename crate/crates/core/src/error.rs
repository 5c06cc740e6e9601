use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("augmented state space has {size} states, above the tabular limit of {limit}")]
    StateSpaceTooLarge { size: usize, limit: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("basis is empty")]
    EmptyBasis,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("outside supported scope: {0}")]
    Scope(String),

    #[error("task {0} is not registered in the meta-policy")]
    UnknownTask(usize),

    #[error("record {0} has no source task")]
    MissingSourceTask(usize),

    #[error("singular linear system while evaluating a policy")]
    Singular,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code: 2 for usage and input errors, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Toml(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
