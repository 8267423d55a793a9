use thiserror::Error;

use crate::mdp::ValidationReport;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP:\n{0}")]
    InvalidMdp(ValidationReport),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("unknown state `{0}`")]
    UnknownState(String),

    #[error("unknown action `{0}`")]
    UnknownAction(String),

    #[error("policy has no action for state `{state}` at t={t}")]
    UndefinedPolicyAction { state: String, t: usize },

    #[error("no transition row for state `{state}` under action `{action}`")]
    MissingKernelRow { state: String, action: String },

    #[error("observed successor `{next}` has zero probability from (`{state}`, `{action}`)")]
    ZeroProbabilityObservation {
        state: String,
        action: String,
        next: String,
    },

    #[error("rejection sampler exceeded {attempts} attempts for one sample")]
    RejectionBudgetExhausted { attempts: u64 },

    #[error("pruning eliminated the observed path (k={k})")]
    EmptyPrunedMdp { k: usize },

    #[error("no budget-feasible policy exists for m={m}")]
    InfeasibleBudget { m: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
