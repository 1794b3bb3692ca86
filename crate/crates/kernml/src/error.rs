use std::io;

use kernml_core::gc_sim::GcError;
use kernml_core::kernel::KernelError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("transport error: {context}: {source}")]
    Transport {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("simulation error: {0}")]
    Sim(#[from] GcError),
    #[error("kernel error: {0}")]
    Kernel(#[from] KernelError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn transport(context: impl Into<String>, source: io::Error) -> Self {
        HarnessError::Transport { context: context.into(), source }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        HarnessError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Transport { .. } => 3,
            HarnessError::Invariant(_) => 4,
            HarnessError::Io { .. } | HarnessError::Sim(_) | HarnessError::Kernel(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
