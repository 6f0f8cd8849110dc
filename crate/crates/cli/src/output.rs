//! Result files. Every file is written to a temporary sibling and renamed
//! into place, so readers never see a partial document.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A named comma-separated table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: Vec<&'static str>, columns: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(header.len(), columns.len());
        Table { name: name.to_string(), header, columns }
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> CliResult<Vec<u8>> {
        let rows = self.columns.first().map_or(0, Vec::len);
        let mut writer = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Serialize(e.to_string());
        writer.write_record(&self.header).map_err(err)?;
        for i in 0..rows {
            writer.serialize(self.columns.iter().map(|c| c[i]).collect::<Vec<_>>()).map_err(err)?;
        }
        writer.into_inner().map_err(|e| CliError::Serialize(e.to_string()))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Serialize(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Writes `result.json` plus one CSV per table into `dir`, returning the
/// paths written.
pub fn write_bundle<T: Serialize>(dir: &Path, document: &T, tables: &[Table]) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::with_capacity(tables.len() + 1);
    for table in tables {
        let path = dir.join(table.file_name());
        write_atomic(&path, &table.to_csv()?)?;
        written.push(path);
    }
    let path = dir.join("result.json");
    write_atomic(&path, to_json(document)?.as_bytes())?;
    written.push(path);
    Ok(written)
}
