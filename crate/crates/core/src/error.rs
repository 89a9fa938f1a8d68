use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A text input (dataset, embedding file, config file) failed to parse.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// The precomputed-embedding provider has no rows for a user.
    #[error("no precomputed embeddings for user `{user_id}`")]
    MissingEmbedding { user_id: String },

    /// Dataset-level inconsistency (unknown users, missing labels, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A checkpoint failed validation.
    #[error("checkpoint field `{field}`: {msg}")]
    Checkpoint { field: String, msg: String },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
