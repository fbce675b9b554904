use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} outside the bin range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Newton or inner fitting loop did not converge. Carries the last
    /// iterate's gradient (or step) norm.
    #[error("convergence failure after {iterations} iterations ({context}), last norm {norm:e}")]
    ConvergenceFailure {
        iterations: usize,
        norm: f64,
        context: String,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u64, column: u64, message: String },

    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Input errors map to exit code 2, numeric ones to 3.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericFailure(_) | Error::ConvergenceFailure { .. } | Error::UndefinedMetric(_)
        )
    }

    /// Prefix a convergence or numeric failure with where it happened.
    pub fn with_context(self, ctx: impl AsRef<str>) -> Self {
        match self {
            Error::ConvergenceFailure {
                iterations,
                norm,
                context,
            } => Error::ConvergenceFailure {
                iterations,
                norm,
                context: format!("{}: {}", ctx.as_ref(), context),
            },
            Error::NumericFailure(m) => Error::NumericFailure(format!("{}: {}", ctx.as_ref(), m)),
            other => other,
        }
    }
}
