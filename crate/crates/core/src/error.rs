use std::io;

/// Errors raised across the engine, grouped by what went wrong rather than where.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Widths, dimensions or hyperparameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (out-of-range coordinate, mismatched tape).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Dataset content that cannot be used (bad label, unknown colour, empty set).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed binary input. `offset` is the byte position where parsing stopped.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Checkpoint or report format problems (bad magic, version mismatch, corruption).
    #[error("format error: {0}")]
    Format(String),

    /// Non-finite values during optimisation.
    #[error("training error in {group}: {message}")]
    Numerical { group: String, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
