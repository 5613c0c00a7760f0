use thiserror::Error;

use crate::factor::FactorSet;

/// Unified error type for model construction, file IO, and the learning
/// pipeline.
#[derive(Debug, Error)]
pub enum ExoError {
    /// A model violated a structural invariant (row sums, bounds, shapes).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The joint state space exceeds the exact-DP guard.
    #[error("joint state space has {states} states, exceeding the cap of {cap}; use the sampled pipeline or raise the cap")]
    StateSpaceTooLarge { states: u128, cap: u128 },

    /// An episode budget request exceeded the configured cap.
    #[error("requested {requested} episodes, exceeding the budget cap of {cap}")]
    EpisodeBudget { requested: u64, cap: u64 },

    /// A policy was queried outside the timestep range it covers.
    #[error("timestep {t} outside policy range {lo}..={hi}")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    /// A rollout-policy index points past the end of the cover.
    #[error("rollout policy index {index} out of range (cover has {count})")]
    PsiIndexOutOfRange { index: usize, count: usize },

    /// The factor-selection scan rejected every candidate set. Unreachable
    /// when the estimates satisfy their accuracy preconditions, so this
    /// carries the worst-violated condition for debugging.
    #[error("factor selection failed: no candidate set satisfied the coverage condition; worst violation at target set {worst_set:?}, restriction {worst_value}, gap {worst_gap:.6}")]
    SelectionFailed {
        worst_set: FactorSet,
        worst_value: usize,
        worst_gap: f64,
    },

    /// The policy-optimization scan rejected every candidate set. The scan
    /// accepts the global maximizer with zero slack, so this signals a bug.
    #[error("policy optimization failed: no candidate factor set accepted (internal invariant violated)")]
    OptimizationFailed,

    /// Instance generation could not certify the requested reachability
    /// floor within the retry budget.
    #[error("generator exhausted {retries} retries; best achieved reachability {achieved:.4} < floor {floor:.4}")]
    RetryCapExhausted {
        retries: usize,
        achieved: f64,
        floor: f64,
    },

    /// A document failed schema validation; the message names the offending
    /// field path.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    /// Caller-supplied argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}
