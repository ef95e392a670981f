use std::path::PathBuf;

/// Errors raised while loading inputs or computing metrics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("entity {entity:?} assigned to conflicting classes {first:?} and {second:?}")]
    ConflictingClass {
        entity: String,
        first: String,
        second: String,
    },

    #[error("redirect cycle: {}", .0.join(" -> "))]
    RedirectCycle(Vec<String>),

    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("aspect universes differ: {0}")]
    UniverseMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
