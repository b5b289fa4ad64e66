use thiserror::Error;

/// Errors produced by the capture, reconstruction and evaluation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    /// A file did not conform to its schema. `path` names the offending field.
    #[error("format error at `{path}`: {message}")]
    Format { path: String, message: String },

    /// A structurally valid input violates a configuration requirement.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A world point has non-positive depth in a camera frame.
    #[error("point behind camera `{camera_id}` (depth {depth:.6} m)")]
    BehindCamera { camera_id: String, depth: f64 },

    /// A geometric construction is rank-deficient or otherwise ill-posed.
    #[error("degenerate configuration: {0}")]
    Degeneracy(String),

    /// Too few observations or samples for an operation.
    #[error("{context}: need at least {needed}, got {got}")]
    Arity {
        context: String,
        needed: usize,
        got: usize,
    },

    /// A frame lacks the data required to continue (detections or markers).
    #[error("gap at frame {frame}{}: {message}", joint.as_ref().map(|j| format!(" (joint `{j}`)")).unwrap_or_default())]
    Gap {
        frame: usize,
        joint: Option<String>,
        message: String,
    },

    /// Array dimensions of two inputs do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A signal is too short for the requested filtering.
    #[error("signal too short: {0}")]
    Length(String),

    /// A layered graph is structurally invalid (e.g. an empty layer).
    #[error("structural error: {0}")]
    Structure(String),

    /// A synthesis spec field is out of range.
    #[error("spec error in `{field}`: {message}")]
    Spec { field: String, message: String },
}

impl Error {
    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn spec(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn arity(context: impl Into<String>, needed: usize, got: usize) -> Self {
        Error::Arity {
            context: context.into(),
            needed,
            got,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
