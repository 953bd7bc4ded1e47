use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based; `None` refers to a binary header.
    #[error("{}{}: {message}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        file: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample {sample} has class {class}, which is not a seen class")]
    UnseenClass { sample: usize, class: usize },

    /// `batch` is `None` for the start-of-epoch evaluation pass.
    #[error("non-finite {component} loss at epoch {epoch}, {}", batch.map(|b| format!("batch {b}")).unwrap_or_else(|| "evaluation pass".into()))]
    NonFinite {
        component: &'static str,
        epoch: usize,
        batch: Option<usize>,
    },

    #[error("unknown config key `{key}` (valid keys: {valid})")]
    UnknownKey { key: String, valid: String },

    #[error("bad config value for `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
