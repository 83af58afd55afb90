//! Bit-stable artifact emission: atomic writes, fixed float rendering,
//! and a content-hash manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::CliError;
use bischro::report::fmt_float;

/// Collects artifacts for one run directory; every file is written to a
/// temporary sibling and atomically renamed, and its SHA-256 recorded.
/// `finish` writes `manifest.json` listing every artifact except itself.
pub struct OutputDir {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    files: &'a BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            hashes: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.flush()?;
        tmp.persist(self.root.join(name))
            .map_err(|e| CliError::Io(e.error))?;
        let digest = Sha256::digest(contents.as_bytes());
        self.hashes.insert(name.to_string(), hex::encode(digest));
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        let manifest = bischro::report::to_json_string(&Manifest {
            files: &self.hashes,
        });
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        tmp.write_all(manifest.as_bytes())?;
        tmp.flush()?;
        tmp.persist(self.root.join("manifest.json"))
            .map_err(|e| CliError::Io(e.error))?;
        Ok(())
    }
}

/// One CSV document with a fixed header; floats carry 17 significant
/// digits so equal runs produce equal bytes.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[CsvCell]) {
        assert_eq!(cells.len(), self.columns, "csv row width");
        let rendered: Vec<String> = cells
            .iter()
            .map(|c| match c {
                CsvCell::Int(v) => v.to_string(),
                CsvCell::Float(v) => fmt_float(*v),
            })
            .collect();
        self.text.push_str(&rendered.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum CsvCell {
    Int(i64),
    Float(f64),
}
