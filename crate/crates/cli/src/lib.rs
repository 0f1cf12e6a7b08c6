//! Library half of the `curb` command-line frontend: configuration,
//! dataset layout, training loops, the frame inference pipeline, and PNG
//! rendering. The binary in `main.rs` is a thin argument dispatcher.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod render;
pub mod train_loop;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 1: malformed configuration or arguments.
    #[error("invalid config: {0}")]
    Config(String),
    /// Exit code 2: a required input file or directory is absent.
    #[error("missing input: {0}")]
    MissingInput(String),
    /// Exit code 3: a numeric failure such as a non-finite loss.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::MissingInput(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<curb_core::nn::NnError> for CliError {
    fn from(e: curb_core::nn::NnError) -> Self {
        match e {
            curb_core::nn::NnError::NonFiniteLoss => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<curb_core::geometry::GeometryError> for CliError {
    fn from(e: curb_core::geometry::GeometryError) -> Self {
        CliError::Config(e.to_string())
    }
}
