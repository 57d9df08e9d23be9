use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} index {index} out of range (size {len})")]
    InvalidIndex {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("observation {obs} has zero likelihood after action {action}")]
    ImpossibleObservation { action: usize, obs: usize },

    #[error("no data for reachable state {state} (action {action:?})")]
    MissingData { state: usize, action: Option<usize> },

    #[error("incomplete policy: {0}")]
    IncompletePolicy(String),

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bound is infinite for a count threshold of zero")]
    InfiniteBound,

    #[error("normalization undefined: optimum and behavior performance coincide")]
    DegenerateNormalization,

    #[error("empty input")]
    EmptyInput,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_index(kind: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::InvalidIndex { kind, index, len })
    }
}
