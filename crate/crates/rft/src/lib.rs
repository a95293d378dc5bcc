//! Std companion to `rft-core`: audio and model file formats, corpus
//! plumbing, configuration, evaluation, and the batch CLI surface.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod formats;
pub mod wav;

use std::process::ExitCode;

use thiserror::Error;

/// Toolkit-level error; maps onto the CLI exit-code contract.
#[derive(Debug, Error)]
pub enum RftError {
    #[error("{0}")]
    Core(#[from] rft_core::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Config(String),
    #[error("{failed} of {total} items failed")]
    Partial { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, RftError>;

impl RftError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        RftError::Io { path: path.into(), source }
    }

    /// Exit-code contract: 0 success, 1 usage/config, 2 partial data
    /// failure, 3 numerical failure.
    pub fn exit_code(&self) -> ExitCode {
        let code: u8 = match self {
            RftError::Core(rft_core::Error::Numerical(_)) => 3,
            RftError::Core(rft_core::Error::Usage(_))
            | RftError::Core(rft_core::Error::Config(_))
            | RftError::Core(rft_core::Error::Dimension { .. })
            | RftError::Config(_) => 1,
            RftError::Partial { .. } => 2,
            RftError::Io { .. } | RftError::Format(_) => 2,
            RftError::Core(_) => 1,
        };
        ExitCode::from(code)
    }
}
