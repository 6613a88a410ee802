use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// A value violates a documented invariant. `field` names the offending
    /// field using a path such as `electrodes` or `gestures[3].name`.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("missing trial file {0}")]
    MissingFile(PathBuf),

    #[error("{context}: expected {expected} columns, found {found}")]
    ColumnMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown electrode id {0}")]
    UnknownElectrode(usize),

    #[error("unknown gesture id {0}")]
    UnknownGesture(u32),

    #[error("unknown user {0:?}")]
    UnknownUser(String),

    #[error("class {class} has {count} instances, need at least {required}")]
    ClassTooSmall {
        class: u32,
        count: usize,
        required: usize,
    },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("operation cancelled")]
    Cancelled,

    #[error("model file: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Field path for validation errors, when one applies.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}
