use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its domain invariant.
    #[error("invalid {field}{}: {reason}", firm_suffix(*.firm))]
    Validation {
        field: String,
        firm: Option<usize>,
        reason: String,
    },

    /// Two paths that must share a time grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The social-cost bracket could not be expanded to contain a sign change.
    #[error("could not bracket the minimizer after {doublings} doublings (last bracket [{lo}, {hi}])")]
    Bracket { lo: f64, hi: f64, doublings: u32 },

    /// A penalty function is not convex on the sampled grid.
    #[error("penalty `{name}` is not convex: right-derivative decreases near {at}")]
    NonConvex { name: String, at: f64 },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn firm_suffix(firm: Option<usize>) -> String {
    match firm {
        Some(i) => format!(" (firm {i})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            firm: None,
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid_firm(field: impl Into<String>, firm: usize, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            firm: Some(firm),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with a validation error unless `value` is finite and strictly positive.
pub(crate) fn require_positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite and > 0, got {value}")))
    }
}
