use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error in {record}: {message}")]
    Schema { record: String, message: String },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("degenerate correspondence: Sampson denominator {0:e} below 1e-15")]
    DegenerateCorrespondence(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate covariance: condition number {0:e} exceeds 1e12")]
    DegenerateCovariance(f64),

    #[error("view graph is disconnected ({components} components); split it with connected_components first")]
    Disconnected { components: usize },

    #[error("non-finite cost contribution from edge ({i}, {j})")]
    NonFiniteCost { i: usize, j: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("no common node ids between estimate and ground truth")]
    EmptyIntersection,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn schema(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            record: record.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Configuration(_) => 1,
            Error::Schema { .. }
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::EmptyIntersection
            | Error::Disconnected { .. }
            | Error::InvalidIntrinsics(_)
            | Error::InsufficientData(_) => 2,
            Error::DegenerateCorrespondence(_)
            | Error::DegenerateCovariance(_)
            | Error::NonFiniteCost { .. } => 3,
        }
    }
}
