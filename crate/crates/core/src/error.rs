use thiserror::Error;

#[derive(Debug, Error)]
pub enum WombleError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("graph construction error: {0}")]
    Graph(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, WombleError>;

pub(crate) fn domain(msg: impl Into<String>) -> WombleError {
    WombleError::Domain(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> WombleError {
    WombleError::Numerical(msg.into())
}
