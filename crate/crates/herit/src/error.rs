use std::path::{Path, PathBuf};

use herit_core::error::Error as ModelError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 1 for numerical failures, 2 for usage, input and IO problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(
                ModelError::AllColumnsConstant
                | ModelError::DegenerateDesign(_)
                | ModelError::NonConvergence { .. }
                | ModelError::NoResidualVariance
                | ModelError::EmptySelection
                | ModelError::DegenerateLikelihood { .. }
                | ModelError::TooManyDroppedReplicates { .. },
            ) => 1,
            _ => 2,
        }
    }
}
