use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse spec {path}: {message}")]
    SpecParse { path: PathBuf, message: String },

    #[error("invalid run spec: {0}")]
    InvalidSpec(String),

    #[error("unknown preset {0:?} (available: rbm-zero-drift, rbm-drift, rou, zhang-case)")]
    UnknownPreset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot serialize results: {0}")]
    Serialize(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error(transparent)]
    Solver(#[from] refdiff::Error),
}

impl CliError {
    /// Process exit status: 2 for invalid input or a violated model
    /// hypothesis, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use refdiff::Error as E;
        match self {
            CliError::SpecParse { .. } | CliError::InvalidSpec(_) | CliError::UnknownPreset(_) => 2,
            CliError::Solver(
                E::Inadmissible(_)
                | E::InvalidConfig(_)
                | E::InvalidMcConfig(_)
                | E::NonCompactDomain
                | E::DomainMismatch(_)
                | E::NonErgodic { .. }
                | E::OutOfRange { .. }
                | E::NonAscendingGrid { .. }
                | E::NonUniformGrid { .. }
                | E::TooFewNodes { .. }
                | E::GridMismatch { .. }
                | E::SlopeOutOfRange { .. },
            ) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } | CliError::Serialize(_) | CliError::ThreadPool(_) => 3,
        }
    }
}
