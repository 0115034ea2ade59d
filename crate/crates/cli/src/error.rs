use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("checkpoint section '{0}' failed its checksum; the file is corrupted")]
    ChecksumMismatch(String),
    #[error("checkpoint format version {found} is not supported by this build (expects {expected}); regenerate it with `imu4d fit-tokenizer` / `imu4d train`")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] imu4d_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit status for each error category.
    pub fn exit_code(&self) -> i32 {
        use imu4d_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::MissingInput(_) => 4,
            CliError::ChecksumMismatch(_) => 5,
            CliError::VersionMismatch { .. } => 6,
            CliError::Corrupt(_) => 7,
            CliError::Core(E::Parse { .. }) => 8,
            CliError::Core(E::Diverged(_)) => 9,
            CliError::Core(E::InvalidConfig(_)) => 2,
            CliError::Core(_) => 10,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.display().to_string())
        } else {
            CliError::io(path, e)
        }
    })
}

pub(crate) fn read_bytes(path: &std::path::Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.display().to_string())
        } else {
            CliError::io(path, e)
        }
    })
}

pub(crate) fn write(path: &std::path::Path, data: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    std::fs::write(path, data).map_err(|e| CliError::io(path, e))
}
