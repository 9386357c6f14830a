use std::fmt;
use std::path::Path;

use demosync::calibration::CalibrationError;
use demosync::episode::{ContainerError, PipelineError};
use demosync::geometry::GeometryError;
use demosync::latency::LatencyError;
use demosync::protocol::ProtocolError;
use demosync::sim::SimError;

/// A domain failure, printed as `ERROR <code> <context>` and mapped to exit 1.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub context: String,
}

impl CliError {
    pub fn new(code: impl Into<String>, context: impl Into<String>) -> Self {
        Self { code: code.into(), context: context.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("IoError", format!("{}: {e}", path.display()))
    }

    /// Argument problems clap cannot see, such as a missing default directory.
    pub fn is_usage(&self) -> bool {
        matches!(self.code.as_str(), "MissingArgument" | "InvalidArgument")
    }

    /// Prefixes the context with the file or directory involved.
    pub fn at(mut self, path: &Path) -> Self {
        let shown = path.display().to_string();
        if !self.context.contains(&shown) {
            self.context = format!("{shown}: {}", self.context);
        }
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep the diagnostic on one line whatever the underlying message holds.
        let context: String = self.context.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
        write!(f, "ERROR {} {}", self.code, context)
    }
}

macro_rules! from_coded {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(e.code(), e.to_string())
            }
        }
    )*};
}

from_coded!(CalibrationError, ContainerError, PipelineError, LatencyError, ProtocolError, SimError);

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::new("InvalidTrajectory", e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
