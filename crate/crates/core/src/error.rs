use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t} is outside the model domain ({domain})")]
    Domain { t: f64, domain: &'static str },

    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },

    #[error("empty trace")]
    EmptyTrace,

    #[error("degenerate trace: {0}")]
    Degenerate(String),

    #[error("window ({start}, {end}] contains no samples")]
    EmptyWindow { start: f64, end: f64 },

    #[error("grid point {t} lies outside the trace span [{first}, {last}]")]
    OutOfSpan { t: f64, first: f64, last: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("cannot average fits: {0}")]
    Average(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    MalformedRow(String),
    NonNumeric(String),
    NonFinite(String),
    /// Timestamp not strictly greater than the previous one.
    Ordering {
        previous: f64,
        current: f64,
    },
    BadMetadata(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::MalformedRow(row) => write!(f, "malformed row `{row}`"),
            ParseErrorKind::NonNumeric(field) => write!(f, "non-numeric field `{field}`"),
            ParseErrorKind::NonFinite(field) => write!(f, "non-finite field `{field}`"),
            ParseErrorKind::Ordering { previous, current } => write!(
                f,
                "timestamps must be strictly increasing ({current} follows {previous})"
            ),
            ParseErrorKind::BadMetadata(msg) => write!(f, "bad metadata: {msg}"),
        }
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
