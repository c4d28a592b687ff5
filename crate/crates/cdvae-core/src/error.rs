//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor/vector dimensions do not match an operation's contract.
    Shape(String),
    /// A non-finite value appeared where finite math was required.
    Numeric(String),
    /// An input value is outside the operation's domain (e.g. non-positive
    /// spectral amplitude).
    Domain(String),
    /// Statistics could not be computed (no voiced frames, zero variance).
    Stats(String),
    /// Invalid or contradictory configuration.
    Config(String),
    /// A named entity (speaker, parameter) is unknown.
    Lookup(String),
    /// Corpus/data-level problem (empty corpus, misaligned streams).
    Data(String),
    /// Training produced a non-finite loss.
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    /// File-system failure; the message names the path.
    Io(String),
    /// A file exists but does not parse as the expected format.
    Parse(String),
    /// Evaluation could not produce a metric (e.g. zero non-silent frames).
    Eval(String),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Domain(_) => "domain",
            Error::Stats(_) => "stats",
            Error::Config(_) => "config",
            Error::Lookup(_) => "lookup",
            Error::Data(_) => "data",
            Error::Divergence { .. } => "divergence",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
            Error::Eval(_) => "eval",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m)
            | Error::Numeric(m)
            | Error::Domain(m)
            | Error::Stats(m)
            | Error::Config(m)
            | Error::Lookup(m)
            | Error::Data(m)
            | Error::Io(m)
            | Error::Parse(m)
            | Error::Eval(m) => write!(f, "{}: {}", self.kind(), m),
            Error::Divergence {
                epoch,
                batch,
                detail,
            } => write!(
                f,
                "divergence: non-finite loss at epoch {epoch}, batch {batch}: {detail}"
            ),
        }
    }
}

impl std::error::Error for Error {}

/// Attaches a path to an I/O failure.
pub fn io_err(path: &std::path::Path, err: std::io::Error) -> Error {
    Error::Io(format!("{}: {}", path.display(), err))
}
