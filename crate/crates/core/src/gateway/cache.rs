use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{CacheKey, WireRequest};

/// One cached completion; stored on disk as `<dir>/<key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: WireRequest,
    pub raw: String,
    pub text: String,
    pub timestamp: String,
}

/// Completion cache, in memory with optional write-through to a directory.
///
/// Entries are never rewritten once present, so a run interrupted half way
/// resumes without repeating calls.
#[derive(Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<CacheKey, CacheEntry>>,
    key_locks: Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir: Some(dir), ..Self::default() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.json", key.0)))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        if let Some(e) = self.entries.lock().unwrap().get(key) {
            return Some(e.clone());
        }
        let path = self.path_for(key)?;
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) => {
                self.entries.lock().unwrap().insert(key.clone(), entry.clone());
                Some(entry)
            }
            Err(e) => {
                log::warn!("ignoring unreadable cache file {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &CacheKey, entry: CacheEntry) -> std::io::Result<()> {
        if let Some(path) = self.path_for(key) {
            let dir = path.parent().expect("cache file has a parent");
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            serde_json::to_writer_pretty(&mut tmp, &entry)?;
            tmp.write_all(b"\n")?;
            tmp.persist(&path).map_err(|e| e.error)?;
        }
        self.entries.lock().unwrap().insert(key.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(super) fn key_lock(&self, key: &CacheKey) -> Arc<Mutex<()>> {
        self.key_locks.lock().unwrap().entry(key.clone()).or_default().clone()
    }
}
