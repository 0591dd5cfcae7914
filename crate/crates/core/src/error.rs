use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdError {
    #[error("zero-norm vector{}", row_suffix(*.row))]
    ZeroNorm { row: Option<usize> },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("degenerate triplet: difference norm below {threshold:e}")]
    DegenerateTriplet { threshold: f64 },

    #[error("memory bank is not ready (fill {fill} of {capacity})")]
    BankNotReady { fill: usize, capacity: usize },

    #[error("memory bank is empty")]
    BankEmpty,

    #[error("batch of {batch} rows exceeds bank capacity {capacity}")]
    BatchTooLarge { batch: usize, capacity: usize },

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("cache does not belong to the current network state")]
    StaleCache,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("insufficient negative pairs for FAR target {target:e}: have {negatives}, need at least {needed}")]
    InsufficientNegatives {
        target: f64,
        negatives: usize,
        needed: usize,
    },

    #[error("training diverged at iteration {iteration}: {what} is non-finite")]
    Divergence { iteration: usize, what: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, KdError>;

pub(crate) fn shape_mismatch(
    context: &'static str,
    expected: impl std::fmt::Debug,
    found: impl std::fmt::Debug,
) -> KdError {
    KdError::DimensionMismatch {
        context,
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}
