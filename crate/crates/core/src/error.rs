use thiserror::Error;

pub type Result<T> = std::result::Result<T, SvarError>;

#[derive(Debug, Error)]
pub enum SvarError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("sampling scheme error: {0}")]
    Scheme(String),

    /// A numerical failure, optionally tied to a position inside a block.
    #[error("numerical error{}: {message}", .time.map(|t| format!(" at step {t}")).unwrap_or_default())]
    Numerical { time: Option<usize>, message: String },

    #[error("capacity exceeded: {required} required, budget is {budget}")]
    Capacity { required: u128, budget: u128 },

    #[error("degenerate mixture component {component} of series {series} (mass {mass:e})")]
    DegenerateComponent {
        series: usize,
        component: usize,
        mass: f64,
    },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SvarError {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        SvarError::Numerical {
            time: None,
            message: message.into(),
        }
    }

    pub(crate) fn numerical_at(time: usize, message: impl Into<String>) -> Self {
        SvarError::Numerical {
            time: Some(time),
            message: message.into(),
        }
    }
}
