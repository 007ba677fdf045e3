use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{what} index {index} out of range (limit {limit})")]
    Range {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("variable does not belong to this tape")]
    Traceability,

    #[error("network has no affine tail: final layer {0} is nonlinear")]
    NoAffineTail(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate label variance: latent dataset needs both labels")]
    DegenerateVariance,

    #[error("invalid dataset spec: {0}")]
    Spec(String),

    #[error("insufficient data for {what}: requested {requested}, available {available}")]
    InsufficientData {
        what: String,
        requested: usize,
        available: usize,
    },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
