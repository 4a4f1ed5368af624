use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain of a function (density, speed, ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// A decision vector violated the stability interval or the detour box.
    #[error("infeasible solution: {0}")]
    Infeasible(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("sample size error: {0}")]
    SampleSize(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad inputs rather than by the numerics.
    pub fn is_config(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}
