use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_LOG: &str = "runs.jsonl";
pub const LOCK_FILE: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    /// Hashes a file, or every file below a directory in sorted order.
    pub fn of(root: &Path, path: &Path) -> Result<Vec<FileHash>> {
        let mut files = Vec::new();
        collect(path, &mut files)?;
        files.sort();
        files
            .into_iter()
            .map(|f| {
                let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
                let rel = f.strip_prefix(root).unwrap_or(&f);
                Ok(FileHash { path: rel.display().to_string(), sha256: sha256_hex(&bytes) })
            })
            .collect()
    }
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            collect(&entry.map_err(|e| Error::io(path, e))?.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// One appended line of `runs.jsonl`. Timestamps live here and nowhere in
/// the artifacts, so artifacts stay byte-reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub version: String,
}

impl RunManifest {
    pub fn append(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_LOG);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_string(self)?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    pub fn read_all(dir: &Path) -> Result<Vec<RunManifest>> {
        let path = dir.join(MANIFEST_LOG);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(MANIFEST_LOG, i + 1, e.to_string())))
            .collect()
    }
}

/// Exclusive writer lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
    _file: File,
}

#[derive(Debug, thiserror::Error)]
#[error("output directory {0} is locked by another run (remove {0}/.lock if stale)")]
pub struct Locked(pub PathBuf);

impl DirLock {
    pub fn acquire(dir: &Path) -> std::result::Result<Self, LockError> {
        std::fs::create_dir_all(dir).map_err(|e| LockError::Io(Error::io(dir, e)))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path, _file: f })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(LockError::Held(Locked(dir.to_path_buf()))),
            Err(e) => Err(LockError::Io(Error::io(&path, e))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LockError {
    #[error(transparent)]
    Held(Locked),
    #[error(transparent)]
    Io(Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(LockError::Held(_))));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
