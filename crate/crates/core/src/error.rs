use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite or otherwise invalid numerical input.
    #[error("invalid data: {0}")]
    Validation(String),

    /// Malformed container file. `field` names the offending header field
    /// (or `payload` for truncated/oversized data).
    #[error("{}: bad {field}: {detail}", path.display())]
    Format {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("unsupported grid {n1}x{n2}: {reason}")]
    UnsupportedGrid {
        n1: usize,
        n2: usize,
        reason: &'static str,
    },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Tensor field that does not follow a required sparsity/symmetry pattern.
    #[error("layout violation: {0}")]
    Layout(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver did not converge in {iterations} iterations (last residual {last:e})")]
    Convergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a NaN or infinite loss. Carries the parameters that
    /// produced it and the offending batch.
    #[error("non-finite loss at epoch {epoch} (batch {batch:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: Vec<usize>,
        parameters: Vec<f64>,
    },

    /// I/O failure on a named file.
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an I/O error with the file it concerns.
    pub fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Validation(_)
            | Error::Format { .. }
            | Error::UnsupportedGrid { .. }
            | Error::InvalidSpectrum(_)
            | Error::Shape(_)
            | Error::Layout(_)
            | Error::Domain(_)
            | Error::File { .. }
            | Error::Io(_) => 3,
            Error::Convergence { .. } => 4,
            Error::NonFiniteLoss { .. } => 5,
        }
    }
}
