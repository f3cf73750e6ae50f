use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures reported by the command-line front end. Each renders as a single line
/// of the form `<kind>: <detail>`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse: {}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("input: {0}")]
    Input(String),
    #[error("compute: {0}")]
    Compute(#[from] manifold_gauss::Error),
    #[error("csv: {}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Wraps a JSON deserialization error with its source location.
    pub fn parse(path: &Path, err: serde_json::Error) -> Self {
        let message = err.to_string();
        let message = match message.find(" at line ") {
            Some(pos) => message[..pos].to_string(),
            None => message,
        };
        Self::Parse {
            path: path.to_path_buf(),
            line: err.line(),
            column: err.column(),
            message,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
