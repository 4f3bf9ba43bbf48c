use std::fmt;

use rosasr_core::Error as CoreError;

/// A failure carrying the pipeline stage it came from.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Stage { stage: &'static str, source: CoreError },
    Io { stage: &'static str, source: std::io::Error },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 1 for usage and configuration problems, 3 for numerical failures,
    /// 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Stage { source, .. } => match source {
                CoreError::Numerical(_) | CoreError::NoPath { .. } => 3,
                CoreError::InvalidConfig(_) | CoreError::InvalidAlpha(_) => 1,
                _ => 2,
            },
            CliError::Io { .. } => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Stage { stage, source } => write!(f, "{stage}: {source}"),
            CliError::Io { stage, source } => write!(f, "{stage}: {source}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Config(_) => None,
            CliError::Stage { source, .. } => Some(source),
            CliError::Io { source, .. } => Some(source),
        }
    }
}

/// Attaches a stage label to core and I/O errors.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> StageContext<T> for rosasr_core::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

impl<T> StageContext<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Io { stage, source })
    }
}
