use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error ({reason}): offending ids [{}]", .ids.join(", "))]
    Validation { reason: String, ids: Vec<String> },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    /// A design matrix without enough variation to identify the parameters.
    #[error("singular design: {0}")]
    Singular(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A failure inside the fit of one named model.
    #[error("{model}: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Validation { .. } => "validation",
            Error::DuplicateId(_) => "duplicate_id",
            Error::Singular(_) => "singular",
            Error::Rank(_) => "rank",
            Error::Fit(_) => "fit",
            Error::Degenerate(_) => "degenerate",
            Error::Undefined(_) => "undefined",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Model { source, .. } => source.kind(),
        }
    }

    pub(crate) fn in_model(self, model: impl std::fmt::Display) -> Self {
        match self {
            e @ Error::Model { .. } => e,
            e => Error::Model {
                model: model.to_string(),
                source: Box::new(e),
            },
        }
    }
}
