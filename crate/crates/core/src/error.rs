use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkiError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: String, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("out-of-vocabulary token `{0}`")]
    OutOfVocabulary(String),

    #[error("split leakage: class {class_id} is not in the seen split")]
    SplitLeakage { class_id: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("frozen parameters changed: {0}")]
    FrozenDrift(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SkiError>;

impl SkiError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        SkiError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(arg: impl Into<String>, reason: impl Into<String>) -> Self {
        SkiError::InvalidArgument {
            arg: arg.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SkiError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        SkiError::Io {
            context: context.into(),
            source,
        }
    }
}
