use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error(transparent)]
    Core(#[from] aplab_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
