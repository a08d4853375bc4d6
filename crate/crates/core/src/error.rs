use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("name has no alphabetic characters: {0:?}")]
    EmptyName(String),
    #[error("feature {index} ({name}) has zero variance across the corpus")]
    DegenerateFeature { index: usize, name: &'static str },
    #[error("need at least {required} vectors/pairs, got {found}")]
    InsufficientPairs { required: usize, found: usize },
    #[error("percentile cuts are not strictly increasing and positive: {0:?}")]
    StrictOrderViolation(Vec<f64>),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("cannot classify identical inputs {0:?}")]
    IdenticalInputs(String),
    #[error("group {0:?} has no observations")]
    EmptyGroup(String),
    #[error("budget of {budget} exposures exceeds {eligible} eligible records")]
    InfeasibleBudget { budget: usize, eligible: usize },
    #[error("no error profile for group {0:?} and pooled fallback disabled")]
    MissingGroupProfile(String),
    #[error("no exposure weight configured for group {0:?}")]
    MissingWeight(String),
    #[error("record {0} has no gold-standard counterpart")]
    MissingGold(String),
    #[error("reference group {0:?} absent from evaluation")]
    MissingReference(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
