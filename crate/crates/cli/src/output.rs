//! Output directory bookkeeping: CSV and JSON writers that remember what
//! they wrote, for the manifest.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::output(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn path(&mut self, name: &str) -> CliResult<PathBuf> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
        }
        self.files.push(name.to_string());
        Ok(p)
    }

    pub fn csv(&mut self, name: &str) -> CliResult<CsvOut> {
        let path = self.path(name)?;
        let w = csv::Writer::from_path(&path).map_err(|e| CliError::output(&path, e))?;
        Ok(CsvOut { path, w })
    }

    pub fn write_rows<S: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = S>) -> CliResult<()> {
        let mut out = self.csv(name)?;
        for row in rows {
            out.row(&row)?;
        }
        out.finish()
    }

    pub fn write_json<S: Serialize + ?Sized>(&mut self, name: &str, value: &S) -> CliResult<()> {
        let path = self.path(name)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::output(&path, e))
    }
}

pub struct CsvOut {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl CsvOut {
    pub fn header<I: IntoIterator<Item = T>, T: AsRef<[u8]>>(&mut self, fields: I) -> CliResult<()> {
        self.w.write_record(fields).map_err(|e| CliError::output(&self.path, e))
    }

    pub fn record<I: IntoIterator<Item = T>, T: AsRef<[u8]>>(&mut self, fields: I) -> CliResult<()> {
        self.header(fields)
    }

    pub fn row<S: Serialize>(&mut self, row: &S) -> CliResult<()> {
        self.w.serialize(row).map_err(|e| CliError::output(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.w.flush().map_err(|e| CliError::output(&self.path, e))
    }
}

/// Reproducibility record written next to every command's outputs.
#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: Option<String>,
    /// Fully resolved configuration, as TOML.
    pub config_echo: Option<String>,
    pub source: Option<String>,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub wall_clock_s: f64,
    pub files: Vec<String>,
}
