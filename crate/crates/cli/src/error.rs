use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_GENERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_DIVERGED: i32 = 6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] deh_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0} already exists (pass --force to overwrite)")]
    Exists(PathBuf),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use deh_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Io { .. } | CliError::Exists(_) => EXIT_IO,
            CliError::Core(e) => match e {
                E::InvalidSpec(_)
                | E::InvalidConfig(_)
                | E::ParamMismatch(_)
                | E::Toml(_) => EXIT_CONFIG,
                E::Io { .. } | E::Parse { .. } | E::Checkpoint(_) | E::Json(_) | E::EmptyDataset => {
                    EXIT_IO
                }
                E::Diverged { .. } => EXIT_DIVERGED,
                _ => EXIT_GENERIC,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
