use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A document could not be parsed. `line` is 1-based when known.
    #[error("parse error{}: {field}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        field: String,
        message: String,
    },

    /// Input parsed but violated a named rule.
    #[error("validation failed [{rule}]: {detail}")]
    Validation { rule: &'static str, detail: String },

    #[error("duplicate entry: {0}")]
    Duplicate(String),

    #[error("{what}: need at least {required} points, got {got}")]
    InsufficientPoints {
        what: String,
        required: usize,
        got: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown size label `{0}`")]
    UnknownSize(String),

    #[error("missing cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),

    #[error("recipe sets differ (only in prediction: [{}]; only in gold: [{}])", only_pred.join(", "), only_gold.join(", "))]
    RecipeMismatch {
        only_pred: Vec<String>,
        only_gold: Vec<String>,
    },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("{0}")]
    Mismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(rule: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            rule,
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(line: Option<usize>, field: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            line,
            field: field.into(),
            message: message.to_string(),
        }
    }
}
