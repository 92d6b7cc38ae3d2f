use std::path::PathBuf;

use legoqml_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("parameter budget mismatch: {0} (pass --allow-budget-mismatch to run anyway)")]
    BudgetMismatch(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Parse { .. } | Self::BudgetMismatch(_) => EXIT_CONFIG,
            Self::Core(e) => match e {
                // Shape and argument errors here come from config values
                // that core validation rejected.
                CoreError::Config(_)
                | CoreError::Scale(_)
                | CoreError::Shape(_)
                | CoreError::Argument(_)
                | CoreError::Range(_)
                | CoreError::QubitIndex { .. } => EXIT_CONFIG,
                CoreError::InvariantViolation(_) | CoreError::FrozenBlock(_) => EXIT_INVARIANT,
                CoreError::Divergence { .. } => EXIT_DIVERGENCE,
                _ => EXIT_FAILURE,
            },
            Self::Io { .. } | Self::CheckFailed(_) => EXIT_FAILURE,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
