use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("kernel matrix is singular after jitter (smallest pivot {pivot:e})")]
    SingularKernel { pivot: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("feature `{0}` has zero variance over observed training entries")]
    ZeroVariance(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("degenerate posterior: all importance weights are -inf")]
    DegeneratePosterior,
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
