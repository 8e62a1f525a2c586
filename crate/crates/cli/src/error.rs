use std::fmt;

use tracevault::anon::AnonError;
use tracevault::capture::{CaptureError, MergeError, SynthError};
use tracevault::formats::FormatError;
use tracevault::summary::SummaryError;
use tracevault_archive::ArchiveError;
use tracevault_service::config::ConfigError;

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or missing configuration. Exit 1.
    Usage(String),
    /// Input that cannot be parsed or violates a rule. Exit 2.
    Data(String),
    /// Filesystem, storage or network failure. Exit 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<CaptureError> for CliError {
    fn from(e: CaptureError) -> Self {
        match e {
            CaptureError::Io(e) => e.into(),
            CaptureError::StorageFull => CliError::Io(e.to_string()),
            CaptureError::Format(e) => e.into(),
            CaptureError::BadPolicy => CliError::Usage(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnonError> for CliError {
    fn from(e: AnonError) -> Self {
        match e {
            AnonError::Io(e) => CliError::Io(format!("reading key file: {e}")),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::Io(_) | ArchiveError::Db(_) | ArchiveError::MissingFile(_) => CliError::Io(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<SummaryError> for CliError {
    fn from(e: SummaryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<MergeError> for CliError {
    fn from(e: MergeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            ConfigError::Parse { .. } => CliError::Data(e.to_string()),
        }
    }
}
