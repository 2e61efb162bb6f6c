use thiserror::Error;

use crate::model::Diagnostic;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model rejected:\n{}", render(.0))]
    Model(Vec<Diagnostic>),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("scale limit exceeded: {0}")]
    ScaleLimit(String),
    #[error("{origin}:{line}: {message}")]
    Format {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("missing label \"{0}\"")]
    MissingLabel(String),
    #[error("actual state {0} has no samples in the confusion data")]
    MissingSamples(usize),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn format(origin: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            origin: origin.to_string(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the desk-scale guards rather than bad input.
    pub fn is_scale_limit(&self) -> bool {
        match self {
            Error::ScaleLimit(_) => true,
            Error::Model(diags) => diags.iter().any(|d| d.code == crate::model::DiagnosticCode::ScaleLimit),
            _ => false,
        }
    }
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
