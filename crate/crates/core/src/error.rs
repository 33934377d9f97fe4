use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("in {context}: {source}")]
    ExprIn {
        context: String,
        #[source]
        source: ExprError,
    },

    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("unknown variable `{name}` in {field}")]
    UnknownVariable { field: String, name: String },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("time {t} outside [{t0}, {t1}]")]
    TimeOutOfRange { t: f64, t0: f64, t1: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("needle widths overflow: interval {first} collides with {second}")]
    WidthOverflow { first: usize, second: usize },

    #[error("needle interval {index} starts at {left} before t0 = {t0}")]
    WidthBeforeStart { index: usize, left: f64, t0: f64 },

    #[error("time {t} is not a node of the integration grid")]
    NotOnGrid { t: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("simplex aborted after {pivots} pivots")]
    PivotLimit { pivots: usize },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("problem file {line}:{column}: {message}")]
    ProblemFile {
        line: usize,
        column: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn expr_in(context: impl Into<String>) -> impl FnOnce(ExprError) -> Self {
        let context = context.into();
        move |source| Error::ExprIn { context, source }
    }
}
