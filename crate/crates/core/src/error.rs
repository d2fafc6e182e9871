use std::io;

/// Errors raised by the library and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mode index {0}, expected 1, 2 or 3")]
    InvalidMode(usize),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("index {index:?} out of range for dims {dims:?}")]
    IndexOutOfRange { index: Vec<usize>, dims: Vec<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not orthonormal (|XᵀX - I|_F = {0:e})")]
    NotOrthonormal(f64),

    #[error("preimage does not map onto the eigenimage (max deviation {0:e})")]
    InconsistentPreimage(f64),

    #[error("no denoiser preimage available for the current eigenimages")]
    MissingPreimage,

    #[error("denoiser is not invertible: {0}")]
    NonInvertible(String),

    #[error(
        "objective increased at iteration {iteration}: {previous:.17e} -> {current:.17e}"
    )]
    MonotonicityViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("ground-truth mask needs at least one positive and one negative pixel")]
    DegenerateTruth,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, found: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
