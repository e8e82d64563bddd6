use thiserror::Error;

use crate::state::StateError;

/// Rejected simulation configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error(transparent)]
    State(#[from] StateError),
}

pub type ConfigResult<T> = Result<T, ConfigError>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> ConfigResult<()> {
    if cond { Ok(()) } else { Err(ConfigError::Invalid(msg())) }
}
