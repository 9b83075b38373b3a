use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("invalid {field}: {msg}")]
    Validation { field: String, msg: String },

    #[error("leg {leg} has zero length at this pose")]
    ZeroLengthLeg { leg: usize },

    #[error("numerical failure in {context}: {msg}")]
    Numerical { context: String, msg: String },

    #[error("no traced curve passes within the matching radius of ({x}, {y})")]
    MissingCurve { x: f64, y: f64 },

    #[error("continuation step failure at t={t}: {msg}")]
    StepFailure { t: f64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: &str, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    pub fn numerical(context: &str, msg: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
