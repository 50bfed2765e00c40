//! Single-point output writing. Every file is produced from data already in
//! trial order, so its bytes do not depend on scheduling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::LabError;

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, LabError> {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        Ok(OutDir(dir.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, LabError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| LabError::io(&p, e))?;
        Ok(p)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf, LabError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| LabError::Encode(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf, LabError> {
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).map_err(|e| LabError::Encode(e.to_string()))?;
            buf.push(b'\n');
        }
        self.write(name, &buf)
    }

    /// The header is written even when `rows` is empty.
    pub fn csv<T: Serialize>(&self, name: &str, header: &[&str], rows: &[T]) -> Result<PathBuf, LabError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(header).map_err(|e| LabError::Encode(e.to_string()))?;
        for r in rows {
            w.serialize(r).map_err(|e| LabError::Encode(e.to_string()))?;
        }
        let mut buf = w.into_inner().map_err(|e| LabError::Encode(e.to_string()))?;
        buf.flush().ok();
        self.write(name, &buf)
    }
}
