use thiserror::Error;

pub type Result<T> = std::result::Result<T, LicapError>;

#[derive(Debug, Error)]
pub enum LicapError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("duplicate entry for node `{0}`")]
    DuplicateNode(String),

    #[error("negative importance value {value} for node `{node}`")]
    NegativeValue { node: String, value: f64 },

    #[error("missing features for node `{0}`")]
    MissingFeature(String),

    #[error("line {line}: ragged feature row, expected {expected} values, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NotScalar([usize; 2]),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("node sets differ: {0}")]
    NodeMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LicapError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LicapError::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        LicapError::Parse {
            line,
            message: msg.into(),
        }
    }
}
