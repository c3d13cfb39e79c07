use thiserror::Error;

pub type Result<T, E = ManError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ManError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty attention: every position is masked")]
    EmptyAttention,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sequence of length {len} exceeds the maximum of {max}")]
    Length { len: usize, max: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ManError {
    pub fn shape(msg: impl Into<String>) -> Self {
        ManError::Shape(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ManError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, configuration)
    /// rather than failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ManError::Parse { .. } | ManError::Config(_) | ManError::Validation(_)
        )
    }
}
