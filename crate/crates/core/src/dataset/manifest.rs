//! CSV manifest: header `path,label`, one row per image, labels `c0`..`c9`.
//! Paths are relative to the directory holding the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{DatasetError, Result};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub fn parse_label(token: &str) -> Result<usize> {
    token
        .strip_prefix('c')
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&c| c < NUM_CLASSES && token.len() == 2)
        .ok_or_else(|| DatasetError::Label(token.to_string()))
}

pub fn format_label(class: usize) -> String {
    format!("c{class}")
}

impl DatasetManifest {
    pub fn new(root: PathBuf, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.label >= NUM_CLASSES {
                return Err(DatasetError::Label(r.label.to_string()));
            }
            if !seen.insert(r.path.as_str()) {
                return Err(DatasetError::Manifest(format!("duplicate path {:?}", r.path)));
            }
        }
        Ok(DatasetManifest { root, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_reader(file, root)
    }

    pub fn from_reader(reader: impl std::io::Read, root: PathBuf) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = csv.headers().map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
            return Err(DatasetError::Manifest(format!(
                "header must be `path,label`, got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut records = Vec::new();
        for (line, row) in csv.records().enumerate() {
            let row = row.map_err(|e| DatasetError::Manifest(format!("row {}: {e}", line + 1)))?;
            records.push(ManifestRecord {
                path: row[0].to_string(),
                label: parse_label(&row[1])?,
            });
        }
        Self::new(root, records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        w.write_record(["path", "label"]).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        for r in &self.records {
            w.write_record([r.path.as_str(), &format_label(r.label)])
                .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        }
        w.flush().map_err(io)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
