use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    settings: &'a BTreeMap<String, String>,
    files: Vec<FileEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Collects the artifacts of one command under the output directory.
pub struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, (usize, String)>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Outputs, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display())))?;
        self.files.insert(name.to_string(), (bytes.len(), hex::encode(Sha256::digest(bytes))));
        log::info!("wrote {}", p.display());
        Ok(())
    }

    /// Writes into a buffer with `f` and then to `name`.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut Vec<u8>) -> upvtag::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest listing every file written so far.
    pub fn finish(self, command: &str, seed: u64, settings: &BTreeMap<String, String>) -> Result<PathBuf, Failure> {
        let files = self
            .files
            .iter()
            .map(|(path, (bytes, sha256))| FileEntry {
                path: path.clone(),
                bytes: *bytes,
                sha256: sha256.clone(),
            })
            .collect();
        let m = Manifest {
            command,
            seed,
            settings,
            files,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| Failure::Runtime(e.to_string()))?;
        text.push('\n');
        let p = self.dir.join(MANIFEST);
        fs::write(&p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display())))?;
        Ok(p)
    }
}
