use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("distribution has no feasible entry")]
    EmptySupport,

    #[error("index {index} is not feasible under the mask")]
    InfeasibleIndex { index: usize },

    #[error("reverse sweep already ran on this tape")]
    AlreadySwept,

    #[error("loss node must hold a single element, got {0}")]
    NonScalarLoss(usize),

    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),

    #[error("gradient keys do not match parameters: {0}")]
    GradientKeys(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        detail: detail.into(),
    }
}
