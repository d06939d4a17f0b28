use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {}; run `tgx {stage}` first", path.display())]
    Missing { path: PathBuf, stage: &'static str },

    #[error("stale artifact {}: built for {found}, current config expects {expected}; rerun `tgx {stage}`", path.display())]
    Stale {
        path: PathBuf,
        stage: &'static str,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Core(#[from] tgx_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for missing or stale inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(tgx_core::Error::Config(_)) => 2,
            CliError::Missing { .. } | CliError::Stale { .. } => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
