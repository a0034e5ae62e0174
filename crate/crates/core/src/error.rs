use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor or image dimensions do not match what an operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a precondition (non-finite values, empty input, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is unsupported or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A data file (manifest, intrinsics, checkpoint, depth grid) is malformed.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    /// Training diverged or produced a non-finite loss.
    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
