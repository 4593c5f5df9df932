use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated an operation's precondition (shape, range, index).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("training error in {stage} at epoch {epoch}: {message}")]
    Training {
        stage: String,
        epoch: usize,
        message: String,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A pipeline stage was asked to run before its upstream artifacts exist.
    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Contract(_) => 4,
            Error::Ingestion(_) | Error::Format { .. } => 5,
            Error::Io { .. } | Error::Image { .. } => 6,
            Error::Training { .. } => 7,
            Error::StageOrder(_) => 8,
            Error::UndefinedMetric(_) => 9,
        }
    }
}
