use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A line in an input file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A file parsed but its structure is inconsistent.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Inputs are individually valid but do not fit together.
    #[error("data error: {0}")]
    Data(String),

    /// A stored artifact was produced by an incompatible model or vocabulary.
    #[error("version error: {0}")]
    Version(String),

    /// A stored artifact is damaged.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },

    /// An experiment stage ran before the artifact it depends on existed.
    #[error("stage error: {0}")]
    Stage(String),

    /// Nothing to analyze.
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
