//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `context` names the record or line when known.
    #[error("{path}{context}: {msg}")]
    Parse {
        path: PathBuf,
        context: String,
        msg: String,
    },

    /// Well-formed input that violates a documented constraint.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Girdle joints coincide (or nearly so), so no mirror axis exists.
    #[error("degenerate girdle: {0}")]
    DegenerateGirdle(String),

    /// A statistic has no defined value on the given data.
    #[error("undefined result: {0}")]
    Undefined(String),

    /// Logistic fit hit a singular weighted normal system with ridge = 0,
    /// the signature of (quasi-)separated data.
    #[error("separated data: weighted normal equations singular at ridge = 0; rerun with a positive ridge")]
    Separation,

    /// A pipeline stage failed; earlier stages' outputs are preserved.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, context: impl Into<String>, msg: impl Into<String>) -> Self {
        let mut context = context.into();
        if !context.is_empty() {
            context = format!(" ({context})");
        }
        Error::Parse { path: path.into(), context, msg: msg.into() }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }
}
