use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tfn_tensor::TensorError),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training stage `{stage}`: {msg}")]
    Stage { stage: String, msg: String },
    #[error("missing checkpoint for stage `{stage}` at {path}")]
    MissingCheckpoint { stage: String, path: PathBuf },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn data_err(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
