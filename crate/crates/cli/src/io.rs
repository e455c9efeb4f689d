use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use engage_core::engagement::SvmModel;
use engage_core::features::{parse_features, FeatureRow};
use engage_core::ingest::{parse_session, SessionStream};
use engage_core::tracker::{parse_tracks, Track};
use engage_core::ingest::SessionMeta;

use crate::error::CliError;

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Creates `path` (and its parent directories) for buffered writing.
pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(path, e))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::io(path, e))
}

fn with_path<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

pub fn read_session(path: &Path) -> Result<SessionStream, CliError> {
    parse_session(open(path)?).map_err(with_path(path))
}

pub fn read_tracks(path: &Path) -> Result<(SessionMeta, Vec<Track>), CliError> {
    parse_tracks(open(path)?).map_err(with_path(path))
}

pub fn read_features(paths: &[std::path::PathBuf]) -> Result<Vec<FeatureRow>, CliError> {
    let mut rows = Vec::new();
    for path in paths {
        rows.extend(parse_features(open(path)?).map_err(with_path(path))?);
    }
    Ok(rows)
}

pub fn read_svm(path: &Path) -> Result<SvmModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    SvmModel::from_json(&text).map_err(with_path(path))
}
