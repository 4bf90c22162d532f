//! Harness error type and its mapping to process exit codes.

use fedistill_core::ErrorKind;

/// Exit codes: 0 success, 2 config error, 3 data error, 4 integrity
/// error, 1 anything else.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("{0}")]
    Core(#[from] fedistill_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Self::Integrity(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Data(_) => EXIT_DATA,
            Self::Integrity(_) => EXIT_INTEGRITY,
            Self::Core(e) => match e.kind() {
                ErrorKind::Parameter | ErrorKind::Contract => EXIT_CONFIG,
                ErrorKind::Dimension
                | ErrorKind::Index
                | ErrorKind::Data
                | ErrorKind::Size
                | ErrorKind::Feasibility => EXIT_DATA,
            },
            Self::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
