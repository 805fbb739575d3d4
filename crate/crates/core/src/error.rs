use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("token {token} out of range for vocabulary of size {size}")]
    TokenOutOfRange { token: u32, size: usize },

    #[error("prompt has {len} tokens, limit is {max}")]
    PromptTooLong { len: usize, max: usize },

    #[error("unknown word in prompt: {0:?}")]
    UnknownWord(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("unknown config key {key:?}; valid keys: {}", .valid.join(", "))]
    UnknownConfigKey { key: String, valid: Vec<String> },

    #[error("config: {0}")]
    Config(String),

    #[error("corrupt file {}: {msg}", .path.display())]
    Format { path: PathBuf, msg: String },

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
