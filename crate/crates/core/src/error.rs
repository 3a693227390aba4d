use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Stages and states are reported 1-based in
/// messages, matching how horizons are usually written down.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid probability distribution at {location}: {reason}")]
    InvalidDistribution { location: String, reason: String },

    #[error("non-finite reward entry at stage {stage}, state {state}, action {action}")]
    NonFiniteReward { stage: usize, state: usize, action: usize },

    #[error("action {action} out of range (num_actions = {num_actions})")]
    ActionOutOfRange { action: usize, num_actions: usize },

    #[error("empty action set at state {state}, stage {stage}")]
    EmptyActionSet { state: usize, stage: usize },

    #[error("subset element (s={state}, a={action}, h={stage}) lies outside the support")]
    SubsetOutsideSupport { state: usize, action: usize, stage: usize },

    #[error("expert is not deterministic at state {state}, stage {stage}: observed actions {first} and {second}")]
    NonDeterministicExpert { state: usize, stage: usize, first: usize, second: usize },

    #[error("expert triple at state {state}, stage {stage} is not covered by the behavioral data")]
    ExpertTripleUncovered { state: usize, stage: usize },

    #[error("support of the reference row is not contained in the allowed next-state set")]
    SupportInfeasible,

    #[error("value bounds were computed for {bounds} but {requested} was requested")]
    SpecMismatch { bounds: String, requested: String },

    #[error("reward panel is empty")]
    EmptyPanel,

    #[error("enumeration of {0} combinations exceeds the cap")]
    EnumerationTooLarge(u128),

    #[error("hypothesis unmet: stage {stage} has every state inside the behavioral support")]
    HypothesisUnmet { stage: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("schema error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema { line: Option<usize>, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Schema { line, message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
