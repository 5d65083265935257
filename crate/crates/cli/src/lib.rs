//! Command implementations behind the `sas` binary.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod output;
pub mod spec;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("malformed samples file: {0}")]
    Samples(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Initialization(_) => 2,
            CliError::Samples(_) => 3,
            CliError::CheckFailed(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<sas_core::SamplerError> for CliError {
    fn from(e: sas_core::SamplerError) -> Self {
        use sas_core::SamplerError as E;
        match e {
            E::Config(c) => CliError::Config(format!("sampler: {c}")),
            E::Dimension { .. } => CliError::Config(e.to_string()),
            E::InitializationFailure | E::Geometry(_) => CliError::Initialization(e.to_string()),
        }
    }
}
