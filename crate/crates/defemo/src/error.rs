use thiserror::Error;

/// Error type shared across the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: String, msg: String },

    #[error("numeric error in {op}: non-finite value produced{}", detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default())]
    Numeric { op: String, detail: Option<String> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Shape { op: op.into(), msg: msg.into() }
    }

    pub fn numeric(op: impl Into<String>) -> Self {
        Error::Numeric { op: op.into(), detail: None }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
