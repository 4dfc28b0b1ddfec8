//! Configuration, file formats and dataset layout for the `stmrf` binary.

pub mod config;
pub mod dataset;
pub mod flo;

/// Problems with the inputs a command was given. The binary exits with
/// status 2 for these.
#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("missing input: {0}")]
    Missing(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
