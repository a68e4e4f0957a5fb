//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any layer of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not compose for the named graph node.
    #[error("shape mismatch in {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },

    /// A non-finite value (NaN/Inf) appeared at graph evaluation.
    #[error("non-finite value produced by {node}")]
    NonFinite { node: String },

    /// Parameter name not present in the store.
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    /// Parameter names must carry exactly one block prefix.
    #[error("parameter name `{0}` must start with `encoder.` or `decoder.`")]
    InvalidParamName(String),

    /// API misuse (e.g. backward from a non-scalar node).
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid input data or arguments.
    #[error("input error: {0}")]
    Input(String),

    /// A malformed line in a textual input file.
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },

    /// I/O failure with the offending path attached.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Corrupt or mismatched checkpoint container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// The requested split cannot satisfy the atom-coverage constraint.
    #[error("infeasible atom coverage at requested sizes; offending atoms: {0:?}")]
    InfeasibleAtoms(Vec<String>),

    /// Lexicon ran out of collision-free alternatives for a source token.
    #[error("lexicon exhausted for token `{0}`: no collision-free alternative left")]
    LexiconExhausted(String),

    /// A training step produced a non-finite loss.
    #[error("non-finite loss at step {step} ({stage})")]
    NonFiniteLoss { stage: String, step: u64 },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
