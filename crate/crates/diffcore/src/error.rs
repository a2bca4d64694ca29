use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op} produced a non-finite value at element {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss is not attached to a computation graph")]
    NotOnGraph,

    #[error("{0} has no higher-order derivative; cannot backward with create_graph")]
    HigherOrderUnsupported(&'static str),

    #[error("batch norm in train mode needs more than one value per channel")]
    BatchTooSmall,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument {
        op,
        msg: msg.into(),
    })
}
