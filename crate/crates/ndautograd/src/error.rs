use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A single operand has an unusable shape (wrong rank, window too large, ...).
    #[error("{op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    /// An operation-specific precondition does not hold.
    #[error("{op}: precondition violated: {detail}")]
    Precondition { op: &'static str, detail: String },
    /// Misuse of the graph API itself.
    #[error("contract violated: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
