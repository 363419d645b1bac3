//! Crate-wide error type. Every fallible public operation returns [`Result`].

/// Errors raised by tensor ops, model construction, data handling and IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible shapes for an operation; names both offending shapes.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An API precondition was violated (bad index, empty input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A token id fell outside the embedding table.
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    Vocabulary { id: usize, vocab_size: usize },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An impossible or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input text; `line` is 1-based (0 when unknown).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Structurally valid input with wrong or missing fields.
    #[error("schema error: {0}")]
    Schema(String),

    /// Checkpoint written by an unsupported format version.
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for dimension errors without repeating the struct literal.
    pub fn dim(op: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op: op.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
