use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state outside the declared box: {0}")]
    Domain(String),

    #[error("integration failed at t = {t_last}: {reason}")]
    Integration { t_last: f64, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("requested time {t} outside the available range [{start}, {end}]")]
    Range { t: f64, start: f64, end: f64 },

    #[error("degenerate splitting: {0}")]
    DegenerateSplitting(String),

    #[error("infeasible parameters: {0}")]
    InfeasibleParameters(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient recurrence: found {found} returns, need at least {required}")]
    InsufficientRecurrence { found: usize, required: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
