use thiserror::Error;

/// Crate-wide error type. Every variant maps to one of the documented CLI
/// exit categories via [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    /// Malformed record in a line-delimited file.
    #[error("data: {path}:{line}: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("json: {e}"))
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Machine-parsable category printed in front of CLI error messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "usage",
            Error::Data(_) | Error::Record { .. } | Error::Io(_) => "data",
            Error::Shape { .. } | Error::Numeric(_) => "numeric",
        }
    }

    /// Documented process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 1,
            "data" => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
