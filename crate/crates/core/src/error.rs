use crate::game::{Action, PlayerPos, Seat};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),

    #[error("invalid planner config: {0}")]
    InvalidPlannerConfig(String),

    #[error("no actions for finished player ({0:?})")]
    PlayerFinished(PlayerPos),

    #[error("illegal action {action:?} for {seat:?} at {pos}")]
    IllegalAction {
        seat: Seat,
        action: Action,
        pos: PlayerPos,
    },

    #[error("cannot step a terminal state")]
    TerminalState,

    #[error("horizon {horizon} too small: {reason}")]
    HorizonTooShort { horizon: u32, reason: String },

    #[error("episode {episode}: illegal human action at step {step}: {source}")]
    IllegalRecordedAction {
        episode: String,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("state key {0} is not reachable (previous positions are not a legal predecessor)")]
    UnreachableKey(String),

    #[error("representation mismatch: model is {model}, planner expects {planner}")]
    RepresentationMismatch { model: String, planner: String },

    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("policy has no action for state {0}")]
    MissingPolicyEntry(String),

    #[error("correlation requires equal-length inputs with at least 2 samples (got {xs} and {ys})")]
    BadSampleSize { xs: usize, ys: usize },

    #[error("invalid synthetic human: {0}")]
    InvalidSynthetic(String),

    #[error("episode {episode} failed replay at step {step}: {reason}")]
    Replay {
        episode: String,
        step: usize,
        reason: String,
    },

    #[error("line {line}: {reason}")]
    Dataset { line: usize, reason: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
