use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Csv {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("git error: {0}")]
    Git(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("node index {index} out of range (tree has {count} nodes)")]
    NodeIndex { index: usize, count: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Csv {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
