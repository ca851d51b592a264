use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Each variant maps to a stable lowercase category (see [`Error::category`])
/// that the command line front end prints as a machine-parsable prefix.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid physical parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("grid coverage: {0}")]
    Coverage(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Input(_) => "input",
            Error::Parameter(_) => "parameter",
            Error::Numeric(_) => "numeric",
            Error::Coverage(_) => "coverage",
            Error::Parse { .. } => "parse",
            Error::EmptyDataset(_) => "empty",
            Error::Lookup(_) => "lookup",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl std::fmt::Display, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
