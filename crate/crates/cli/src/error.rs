use std::fmt;
use std::path::Path;

use engage_core::dataset::DatasetError;
use engage_core::engagement::EngagementError;
use engage_core::features::FeatureError;
use engage_core::gaze::GazeError;
use engage_core::heatmap::HeatmapError;
use engage_core::ingest::IngestError;
use engage_core::net3d::checkpoint::CheckpointError;
use engage_core::net3d::Net3dError;
use engage_core::synth::SynthError;
use engage_core::tracker::{TrackFileError, TrackerError};

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(DatasetError, GazeError, HeatmapError, IngestError, CheckpointError, SynthError, TrackFileError, TrackerError);

impl From<Net3dError> for CliError {
    fn from(e: Net3dError) -> Self {
        match e {
            Net3dError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EngagementError> for CliError {
    fn from(e: EngagementError) -> Self {
        match e {
            EngagementError::NoConvergence(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
