//! Error types shared across the crate.

use thiserror::Error;

use crate::half::Half;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid spin-count / angular-momentum pairing or other domain violation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An encoding does not fit in the requested block.
    #[error("capacity error: block J={j} has {available} levels, need {needed}")]
    Capacity { j: Half, available: usize, needed: usize },

    /// A density-matrix block was requested that carries no weight.
    #[error("block J={j} has zero weight")]
    EmptyBlock { j: Half },

    /// A coefficient-table lookup outside the precomputed range.
    #[error("coefficient table covers N <= {n_max}, requested (N={n}, J={j})")]
    TableRange { n_max: u32, n: u32, j: Half },

    /// Precomputed coefficients failed verification against the exact model.
    #[error("coefficient table integrity failure: {0}")]
    TableIntegrity(String),

    /// A computation exceeds the configured desk-scale resource guard.
    #[error("resource guard: {0}")]
    Resource(String),

    /// Deterministic integration became unreliable (trace drift, step size).
    #[error("integration error: {0}")]
    Integration(String),

    /// A jump branch with zero weight was applied; indicates a bookkeeping bug.
    #[error("impossible jump branch: post-jump state has zero norm")]
    ImpossibleBranch,

    /// State support fell outside every syndrome subspace.
    #[error("unrecoverable state: support outside all syndrome subspaces")]
    Unrecoverable,

    /// Teleport hand-off received a state it cannot decode.
    #[error("hand-off failure: {0}")]
    Handoff(String),

    /// Configuration file or flag validation failure.
    #[error("config error: {0}")]
    Config(String),

    /// Self-test of the exact reference model failed.
    #[error("verification failure: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 validation, 2 runtime, 3 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Resource(_) => 1,
            Error::TableIntegrity(_) | Error::Verification(_) => 3,
            _ => 2,
        }
    }
}
