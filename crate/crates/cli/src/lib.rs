//! Library behind the `panoscan` binary: configuration, tile sources, the
//! tile-enhancer seam, and the batch pipeline runners.

pub mod config;
pub mod enhance;
pub mod pipeline;
pub mod source;

use std::fmt;
use std::process::ExitCode;

use panoscan_core::flow::FlowError;
use panoscan_core::fusion::FusionError;
use panoscan_core::io::FormatError;
use panoscan_core::metrics::MetricsError;
use panoscan_core::trajectory::TrajectoryError;

/// Exit code 2: configuration or validation failure.
/// Exit code 3: I/O or file-format failure.
/// Exit code 4: numerical divergence.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Divergence(String),
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError::Config(message)
    }

    pub fn io(message: String) -> Self {
        CliError::Io(message)
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Io(_) => ExitCode::from(3),
            CliError::Divergence(_) => ExitCode::from(4),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Divergence(m) => write!(f, "numerical divergence: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Format(f) => CliError::from(f),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Diverged { .. }
            | FlowError::SampleDiverged { .. }
            | FlowError::NonFiniteLoss => CliError::Divergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
