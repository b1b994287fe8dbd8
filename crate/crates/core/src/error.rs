use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("invalid fault plan: {0}")]
    PlanInvalid(String),

    #[error("site filter eliminated every eligible fault site")]
    EmptyPlan,

    #[error("golden run {run_id} did not complete: {detail}")]
    GoldenRunFailed { run_id: String, detail: String },

    #[error("profiling run did not complete: {0}")]
    ProfileRunFailed(String),

    #[error("golden traces misaligned: {0}")]
    MisalignedTraces(String),

    #[error("log line {line}: {source}")]
    LogParse {
        line: usize,
        source: serde_json::Error,
    },

    #[error("empty log: {0}")]
    EmptyLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
