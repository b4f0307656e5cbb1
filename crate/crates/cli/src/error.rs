use std::path::PathBuf;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ierd_core::Error),

    #[error("{flag}: {reason}")]
    Usage { flag: &'static str, reason: String },

    #[error("config file {path}: {reason}")]
    ConfigFile { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} images failed")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn usage(flag: &'static str, reason: impl Into<String>) -> Self {
        CliError::Usage { flag, reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Tag printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage { .. } => "usage",
            CliError::ConfigFile { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::PartialFailure { .. } => "image",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } | CliError::ConfigFile { .. } => 2,
            _ => 1,
        }
    }
}
