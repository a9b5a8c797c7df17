//! File formats, scenario execution and artifact emission around
//! [`flexform_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::Path;

pub mod commands;
pub mod config;
pub mod output;

pub use flexform_core as core;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// 2 for bad input, 3 for numeric failures and contract violations.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Contract(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}
