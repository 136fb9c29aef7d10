use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FslError {
    #[error("layer fan-in and fan-out must be positive, got {fan_out}x{fan_in}")]
    ZeroFan { fan_out: usize, fan_in: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("forward cache is stale: {0}")]
    StaleCache(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("epoch count must be at least 1")]
    ZeroEpochs,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("not a permutation of 0..{0}")]
    NotAPermutation(usize),

    #[error("duplicate edge {0} in sparse ranking")]
    DuplicateEdge(usize),

    #[error("rankings have mismatched lengths")]
    LengthMismatch,

    #[error("no updates to aggregate")]
    EmptyUpdates,

    #[error("aggregator precondition violated: {0}")]
    AggregatorPrecondition(String),

    #[error("malicious direction undefined for a zero-norm benign update")]
    ZeroNormDirection,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("malformed IDX file: {0}")]
    IdxFormat(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FslError {
    fn from(e: std::io::Error) -> Self {
        FslError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FslError>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> FslError {
    FslError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
