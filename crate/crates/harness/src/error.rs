use thiserror::Error;

use crate::config::ConfigError;
use spdelab_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{context}: {source}")]
    BlowUp { context: String, source: CoreError },

    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("{0} hard check(s) failed")]
    HardCheckFailed(usize),
}

impl HarnessError {
    /// Process exit code: 1 failed check, 2 bad configuration, 3 blow-up.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::BlowUp { .. } => 3,
            HarnessError::Core { source, .. } => match source {
                CoreError::InvalidGrid(_)
                | CoreError::InvalidArgument(_)
                | CoreError::NegativeTime(_)
                | CoreError::ModeMismatch { .. }
                | CoreError::RateMismatch => 2,
                _ => 1,
            },
            HarnessError::Io { .. } | HarnessError::HardCheckFailed(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Attach a context string, sorting blow-ups into their own variant.
pub fn core_err(context: impl Into<String>) -> impl FnOnce(CoreError) -> HarnessError {
    let context = context.into();
    move |source| match source {
        CoreError::BlowUp { .. }
        | CoreError::SampleBlowUp { .. }
        | CoreError::ReactionOverflow { .. } => HarnessError::BlowUp { context, source },
        source => HarnessError::Core { context, source },
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
