use nncore::NnError;
use thiserror::Error;

use crate::envs::EnvError;
use crate::fuzzy::FuzzyError;
use crate::registry::UnknownName;
use crate::ruledsl::Diagnostics;

#[derive(Debug, Error)]
pub enum KogunError {
    #[error(transparent)]
    Engine(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("rule base rejected:\n{0}")]
    Rules(#[from] Diagnostics),
    #[error(transparent)]
    Unknown(#[from] UnknownName),
    #[error("environment failed at rollout step {step}: {source}")]
    Rollout { step: usize, source: EnvError },
    #[error("invalid usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
}

pub type Result<T, E = KogunError> = std::result::Result<T, E>;
