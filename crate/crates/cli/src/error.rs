use std::path::Path;

use satpm_core::dataset::DatasetError;
use satpm_core::eval::EvalError;
use satpm_core::geo::GeoError;
use satpm_core::ingest::IngestError;
use satpm_core::models::ModelError;
use satpm_core::tiles::TileError;
use satpm_core::train::TrainError;
use thiserror::Error;

/// Exit code 1 for everything a user can fix in their input, 2 for the filesystem and network.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    External(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 1,
            CliError::Io { .. } | CliError::External(_) => 2,
        }
    }
}

fn invalid(e: impl ToString) -> CliError {
    CliError::Invalid(e.to_string())
}

fn external(e: impl ToString) -> CliError {
    CliError::External(e.to_string())
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match &e {
            IngestError::Csv(c) if c.is_io_error() => external(e),
            _ => invalid(e),
        }
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        invalid(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        invalid(e)
    }
}

impl From<TileError> for CliError {
    fn from(e: TileError) -> Self {
        match e {
            TileError::HttpError(_) | TileError::Transport(_) | TileError::CacheWriteError { .. } => external(e),
            _ => invalid(e),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => external(e),
            _ => invalid(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Io(_) => external(e),
            EvalError::Csv(c) if c.is_io_error() => external(e),
            _ => invalid(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(_) | TrainError::ImageMissing(_) => external(e),
            TrainError::Tile(t) => t.into(),
            TrainError::Metric(m) => m.into(),
            _ => invalid(e),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            external(e)
        } else {
            invalid(e)
        }
    }
}
