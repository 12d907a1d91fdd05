use std::path::PathBuf;

use crate::network::NeuronId;

/// Errors produced by the verifier library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector or matrix did not have the expected dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A value violated a structural invariant (non-finite weight, empty layer list, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Quantization step was zero, negative or not finite.
    #[error("invalid quantization step {0}")]
    InvalidStep(f64),
    /// Two literals asserted opposite phases of the same neuron.
    #[error("inconsistent assumptions on neuron {0}")]
    InconsistentAssumption(NeuronId),
    /// `pop_scope` on a system without open scopes.
    #[error("pop on empty scope stack")]
    EmptyScopeStack,
    /// A constraint tag was asserted twice while both copies are live.
    #[error("duplicate constraint tag {0}")]
    DuplicateTag(String),
    /// The LP backend could not reach a trustworthy answer.
    #[error("LP solver failure: {0}")]
    SolverFailure(String),
    /// A precondition of an operation was not met by the caller.
    #[error("contract violation: {0}")]
    ContractViolation(String),
    /// The two networks are not related by quantization or pruning.
    #[error("networks are incompatible: {0}")]
    Incompatible(String),
    /// The proof was produced for a different problem.
    #[error("proof fingerprint mismatch: {0}")]
    FingerprintMismatch(String),
    /// The proof file carries an unsupported or missing version header.
    #[error("unsupported proof version: {0}")]
    VersionMismatch(String),
    /// Malformed document.
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(origin: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            origin: origin.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
