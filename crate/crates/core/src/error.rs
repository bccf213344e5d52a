use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("order {order} exceeds the configured maximum {max}")]
    OrderExceedsMax { order: u32, max: u32 },

    #[error("expected a unit vector, got norm {norm}")]
    NonUnitVector { norm: f64 },

    #[error("selection rule violated: J={j} not in [|{k}-{l}|, {k}+{l}]")]
    SelectionRule { k: u32, l: u32, j: u32 },

    #[error("rotation matrix is not orthonormal (deviation {deviation:e})")]
    NotARotation { deviation: f64 },

    #[error("cannot normalize an empty point cloud")]
    EmptyCloud,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("site {site:?} lies outside dense extent {dims:?}")]
    OutOfBounds { site: [i32; 3], dims: [usize; 3] },

    #[error("duplicate site {0:?}")]
    DuplicateSite([i32; 3]),

    #[error("field type mismatch: expected {expected}, found {found}")]
    FieldMismatch { expected: String, found: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layer {index} ({kind}): {message}")]
    ChainMismatch {
        index: usize,
        kind: String,
        message: String,
    },

    #[error("tape was recorded against network version {tape}, network is at {network}")]
    StaleTape { tape: u64, network: u64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown {what} '{name}'")]
    Unknown { what: &'static str, name: String },

    #[error("training diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn field_mismatch(expected: impl ToString, found: impl ToString) -> Self {
        Error::FieldMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
