use thiserror::Error;

pub type Result<T> = std::result::Result<T, GvdError>;

#[derive(Debug, Error)]
pub enum GvdError {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure in {context}: {reason}")]
    Numerical { context: String, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GvdError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GvdError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn dimension(
        context: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        GvdError::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn numerical(context: impl Into<String>, reason: impl Into<String>) -> Self {
        GvdError::Numerical {
            context: context.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable category, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            GvdError::Config { .. } => "config",
            GvdError::Dimension { .. } => "dimension",
            GvdError::Precondition(_) => "precondition",
            GvdError::Numerical { .. } => "numerical",
            GvdError::Training { .. } => "training",
            GvdError::Clustering(_) => "clustering",
            GvdError::Format { .. } => "format",
            GvdError::Io(_) => "io",
        }
    }

    /// Prefix the context of an error with a pipeline stage or step description.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            GvdError::Numerical { context, reason } => GvdError::Numerical {
                context: format!("{ctx}: {context}"),
                reason,
            },
            GvdError::Dimension {
                context,
                expected,
                got,
            } => GvdError::Dimension {
                context: format!("{ctx}: {context}"),
                expected,
                got,
            },
            GvdError::Precondition(msg) => GvdError::Precondition(format!("{ctx}: {msg}")),
            GvdError::Clustering(msg) => GvdError::Clustering(format!("{ctx}: {msg}")),
            other => other,
        }
    }
}
