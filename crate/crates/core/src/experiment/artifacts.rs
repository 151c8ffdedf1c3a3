//! Artifact directories with content-hash manifests and a directory lock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";
const LOCK_FILE: &str = ".lock";

/// Written into every stage directory after the stage completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    /// Hash of everything the stage's output depends on.
    pub input_hash: String,
    /// sha256 of every artifact file, keyed by path relative to the stage directory.
    pub artifacts: BTreeMap<String, String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::hashing::sha256_hex(&bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE && n != LOCK_FILE) {
            out.push(path.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_slice(&bytes)?))
    }

    /// Re-hashes every recorded artifact.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (file, hash) in &self.artifacts {
            let found = hash_file(&dir.join(file))?;
            if &found != hash {
                return Err(Error::format(None, format!("{} does not match its manifest hash", dir.join(file).display())));
            }
        }
        Ok(())
    }
}

/// Root of one experiment's artifacts.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub config_hash: String,
    /// Recompute stages whose recorded inputs differ instead of failing.
    pub force: bool,
}

/// Outcome of looking up a stage directory.
pub enum StageState {
    /// Present with matching inputs and verified artifacts.
    Fresh,
    Missing,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config_hash: String, force: bool) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Workspace { root, config_hash, force })
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    /// Fresh, missing, or a stale-cache error (cleared when `force` is set).
    pub fn check(&self, stage: &str, input_hash: &str) -> Result<StageState> {
        let dir = self.stage_dir(stage);
        match RunManifest::load(&dir)? {
            None => Ok(StageState::Missing),
            Some(m) if m.input_hash == input_hash => {
                m.verify(&dir)?;
                Ok(StageState::Fresh)
            }
            Some(m) => {
                if self.force {
                    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    Ok(StageState::Missing)
                } else {
                    Err(Error::StaleCache { dir, expected: input_hash.to_string(), found: m.input_hash })
                }
            }
        }
    }

    /// Records every file under the stage directory in a fresh manifest.
    pub fn finish(&self, stage: &str, input_hash: &str, started: Instant) -> Result<RunManifest> {
        let dir = self.stage_dir(stage);
        let mut files = Vec::new();
        collect_files(&dir, &dir, &mut files)?;
        let mut artifacts = BTreeMap::new();
        for f in files {
            artifacts.insert(f.to_string_lossy().replace('\\', "/"), hash_file(&dir.join(&f))?);
        }
        let manifest = RunManifest {
            stage: stage.to_string(),
            config_hash: self.config_hash.clone(),
            input_hash: input_hash.to_string(),
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Clears a stage directory before it is rewritten.
    pub fn reset(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn lock(&self) -> Result<DirLock> {
        DirLock::acquire(&self.root)
    }
}

/// Exclusive lock on an artifact directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::contract(format!(
                "{} is locked by another run (delete {} if no run is active)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
