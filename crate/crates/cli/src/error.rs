use std::fmt::Display;

use thiserror::Error;

/// Process exit code for configuration and input errors.
pub const EXIT_INPUT: i32 = 2;
/// Process exit code for failures after work has started.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, missing or corrupt inputs. Exit code 2.
    #[error("{0}")]
    Input(String),

    /// Training divergence, I/O failure while writing results. Exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn input(msg: impl Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn runtime(msg: impl Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    /// Error naming the configuration field `section.key`.
    pub fn field(field: &str, msg: impl Display) -> Self {
        CliError::Input(format!("{field}: {msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
