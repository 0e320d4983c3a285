use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("all particle weights vanished at step {t}")]
    Degenerate { t: usize },
    #[error("categorical weights are all zero")]
    ZeroWeights,
    #[error("enumeration exceeded {0} configurations")]
    EnumerationCap(usize),
    #[error("continuous draw requested under exhaustive enumeration")]
    ContinuousUnderEnumeration,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training aborted at iteration {iter}: {cause}")]
    TrainingAborted { iter: usize, cause: String },
    #[error("innovation covariance is not positive definite at step {t}")]
    NotPositiveDefinite { t: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("config: {0}")]
    Config(String),
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
