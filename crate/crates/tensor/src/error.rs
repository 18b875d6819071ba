use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every dimension must be positive")]
    EmptyShape(Vec<usize>),

    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: kernel extent {kernel} exceeds padded input extent {input}")]
    KernelTooLarge {
        op: &'static str,
        kernel: usize,
        input: usize,
    },

    #[error("transposed conv: output length {hint} is inconsistent with input length {input} at stride {stride}")]
    InconsistentOutputHint {
        hint: usize,
        input: usize,
        stride: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("gradient for parameter `{0}` is not finite")]
    NonFiniteGradient(String),

    #[error("backward already ran on this tape; run a fresh forward pass first")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter `{0}` is not assigned to any optimizer group")]
    UngroupedParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
