use thiserror::Error;

#[derive(Debug, Error)]
pub enum EaacError {
    #[error(transparent)]
    Core(#[from] mrq_core::Error),

    #[error(transparent)]
    Nn(#[from] mrq_nn::NnError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("infeasible scored action: {0}")]
    Infeasible(String),

    #[error("training config: {0}")]
    Config(String),

    #[error("non-finite training quantity: {0}")]
    NonFinite(String),

    #[error("length mismatch: {0}")]
    Length(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EaacError>;
