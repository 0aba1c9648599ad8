//! File formats, run configuration and batch commands around [`mlfe_core`].
//!
//! The binary `mlfe` is a thin clap front end over [`commands`]. Everything a
//! command writes goes through [`io`], which writes atomically (temp file,
//! then rename).

pub mod commands;
pub mod config;
pub mod io;
pub mod svg;

use std::fmt;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

/// Errors surfaced by a command, each mapped to one exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Numerical(#[from] mlfe_core::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn validation(msg: impl fmt::Display) -> Self {
        Self::Validation(msg.to_string())
    }

    pub fn io(context: impl fmt::Display, source: std::io::Error) -> Self {
        Self::Io { context: context.to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => exit::VALIDATION,
            Self::Numerical(_) => exit::NUMERICAL,
            Self::Io { .. } => exit::IO,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation",
            Self::Numerical(_) => "numerical",
            Self::Io { .. } => "io",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
