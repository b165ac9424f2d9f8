use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: validation problems exit with 2,
/// numerical failures with 3 and I/O failures with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint version mismatch: {0}")]
    CheckpointVersion(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("corpus format error at line {line}: {message}")]
    CorpusFormat { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable process exit code for scripting.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidInput(_)
            | Error::Dimension(_)
            | Error::CheckpointVersion(_)
            | Error::CorruptFile(_)
            | Error::CorpusFormat { .. } => 2,
            Error::Numerical(_) => 3,
            Error::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
