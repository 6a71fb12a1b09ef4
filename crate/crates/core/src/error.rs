use std::path::PathBuf;

use crate::backend::BackendError;
use crate::census::CensusError;
use crate::config::ConfigError;
use crate::experiment::ExperimentError;
use crate::probe::ProbeError;
use crate::stats::StatsError;
use crate::trust_game::GameError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const BACKEND: i32 = 3;
    pub const DESIGN: i32 = 4;
    pub const SHORTFALL: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Census(#[from] CensusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Refused(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit::CONFIG,
            Error::Backend(BackendError::Config(_)) => exit::CONFIG,
            Error::Backend(_) => exit::BACKEND,
            Error::Probe(ProbeError::Shortfall { .. }) => exit::SHORTFALL,
            Error::Probe(ProbeError::Config(_)) => exit::CONFIG,
            Error::Probe(ProbeError::Unavailable(_)) => exit::BACKEND,
            Error::Game(GameError::Backend(_)) => exit::BACKEND,
            Error::Experiment(ExperimentError::Config(_)) => exit::CONFIG,
            Error::Experiment(ExperimentError::Design(_)) => exit::DESIGN,
            Error::Stats(StatsError::Design(_)) => exit::DESIGN,
            Error::Refused(_) => exit::DESIGN,
            _ => exit::OTHER,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Error {
        let path = path.into();
        move |source| Error::Csv { path, source }
    }
}
