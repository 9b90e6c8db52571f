use thiserror::Error;

/// Errors produced by the evaluation, transcription, and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A point fell outside the workspace box.
    #[error("coordinate {axis} = {value} lies outside workspace bounds [{lower}, {upper}]")]
    OutsideWorkspace {
        axis: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    /// A trajectory knot mapped outside the workspace box.
    #[error("knot {knot}: coordinate {axis} = {value} lies outside workspace bounds [{lower}, {upper}]")]
    KnotOutsideWorkspace {
        knot: usize,
        axis: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    /// A caller violated a documented precondition (dimensions, positivity, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// The solver produced a non-finite objective or gradient.
    #[error("solver diverged at outer iteration {outer}, inner iteration {inner}: {reason}")]
    Diverged {
        outer: usize,
        inner: usize,
        reason: String,
        /// Last iterate whose objective and gradient were finite.
        last_finite: Vec<f64>,
    },
    /// Invalid scenario or artifact content.
    #[error("invalid {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
