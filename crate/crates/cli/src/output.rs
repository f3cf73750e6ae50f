use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Creates the output directory if needed and returns the path of `name` inside it.
pub fn output_path(dir: &Path, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.join(name))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes a header and string records.
pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    writer
        .write_record(header)
        .map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| CliError::csv(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Writes serializable rows with headers taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| CliError::csv(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}
