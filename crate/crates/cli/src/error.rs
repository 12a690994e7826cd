use std::path::PathBuf;

use thiserror::Error;

/// Failures of a command, each class with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numerical(_) => 5,
            CliError::Io { .. } => 6,
            CliError::Checkpoint(_) => 7,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<hkgdiff::Error> for CliError {
    fn from(e: hkgdiff::Error) -> Self {
        use hkgdiff::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Infeasible(_) | E::Toml(_) => CliError::Config(msg),
            E::MalformedRecord { .. } | E::UnknownLabel { .. } | E::OutOfVocab { .. } | E::Query(_) | E::Json(_) => {
                CliError::Data(msg)
            }
            E::Numerical(_) | E::Shape { .. } => CliError::Numerical(msg),
            E::Checkpoint(_) => CliError::Checkpoint(msg),
            E::Io { path, source } => CliError::Io { path, source },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
