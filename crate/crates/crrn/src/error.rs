use crate::tensor::Dims;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Dims,
        got: Dims,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("batch norm used in eval mode before any training step")]
    UninitializedBatchNorm,
    #[error("training loss became NaN at epoch {epoch}, sequence {sequence}")]
    NanLoss { epoch: usize, sequence: usize },
    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("bad tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad config: {0}")]
    Config(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
