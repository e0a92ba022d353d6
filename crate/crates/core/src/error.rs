use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed architecture document.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally invalid architecture; `node` names the offending node id.
    #[error("invalid architecture at node `{node}`: {reason}")]
    Validation { node: String, reason: String },

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    /// Tensor container framing problems: bad magic, version, truncated payload.
    #[error("tensor format error: {0}")]
    Format(String),

    /// A tensor set disagrees with the architecture it is used with.
    #[error("shape mismatch at layer `{layer}`: {reason}")]
    Shape { layer: String, reason: String },

    #[error("invalid scores at layer `{layer}`: {reason}")]
    InvalidScores { layer: String, reason: String },

    /// A quota allocator cannot meet the requested target.
    #[error("{allocator} infeasible at sparsity {target}: {reason}")]
    Infeasible {
        allocator: String,
        target: f64,
        reason: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("oracle size bound exceeded: {units} units > {bound}")]
    OracleBound { units: usize, bound: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(node: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            node: node.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(layer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by malformed or mismatched user input (as
    /// opposed to failures while computing on valid input).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Validation { .. }
                | Error::UnknownArch(_)
                | Error::Format(_)
                | Error::Shape { .. }
                | Error::InvalidScores { .. }
                | Error::InvalidArgument(_)
        )
    }
}
