use thiserror::Error;

#[derive(Debug, Error)]
pub enum EpError {
    #[error("malformed curve: {0}")]
    MalformedCurve(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("degenerate curve: all samples below speed epsilon")]
    DegenerateCurve,
    #[error("not enough samples: need {need}, got {got}")]
    NotEnoughSamples { need: usize, got: usize },
    #[error("singular observation matrix: {0}")]
    SingularMatrix(String),
    #[error("scenario rejected: {0}")]
    ScenarioRejected(String),
    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("metric spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at iteration {iter} (batch {batch}): {detail}")]
    NanLoss {
        iter: usize,
        batch: usize,
        detail: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EpError>;
