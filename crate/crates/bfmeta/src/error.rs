//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's input contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No nonce can satisfy the requested difficulty.
    #[error("mining failed: difficulty {difficulty} exhausts the nonce space")]
    MiningFailed { difficulty: u32 },

    /// Loss or gradient became non-finite during local training.
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    /// Every submission in the batch carried a nonzero flag.
    #[error("all submissions flagged; nothing to aggregate")]
    EmptyAggregation,

    /// Falsification checks need the record mined first; retry after mining.
    #[error("record for client {address} round {round} is not on the chain yet")]
    VerificationPending { address: String, round: u64 },

    /// Selection pool is empty (everyone blacklisted or at zero reputation).
    #[error("no eligible clients: {0}")]
    NoEligibleClients(String),

    /// Requested more clients than have positive selection probability.
    #[error("insufficient clients: requested {requested}, eligible {eligible}")]
    InsufficientClients { requested: usize, eligible: usize },

    /// Event loop exceeded its processing cap without draining.
    #[error("runaway simulation: more than {cap} events processed")]
    RunawaySimulation { cap: usize },

    /// Configuration failed validation; the message names the field.
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed chain file: {0}")]
    ChainFormat(String),

    #[error("csv dataset error: {0}")]
    CsvFormat(String),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
