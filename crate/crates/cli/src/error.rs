use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] graspdiff::Error),
    #[error("{0}")]
    Usage(String),
    #[error("config file {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error("output directory {0} exists and is not empty")]
    NotFresh(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Config { .. }
            | CliError::Core(graspdiff::Error::UnknownMethod(_) | graspdiff::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        if self.exit_code() == 2 && matches!(self, CliError::Core(_)) {
            return "usage";
        }
        match self {
            CliError::Core(_) => "runtime",
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::NotFresh(_) => "output-not-fresh",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
