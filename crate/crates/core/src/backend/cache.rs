//! On-disk score cache: one content-addressed JSON entry per scored
//! (backend identity, prompt, continuation) triple, stored at
//! `<dir>/<first two hex digits>/<sha256>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    identity: String,
    prompt_sha256: String,
    continuation: String,
    score: f64,
    normalized: bool,
}

#[derive(Debug)]
pub struct ScoreCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

impl ScoreCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| cache_err(&dir, e))?;
        Ok(ScoreCache {
            dir,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key(identity: &str, prompt: &str, continuation: &str) -> String {
        let mut h = Sha256::new();
        for part in [identity, prompt, continuation] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(
        &self,
        identity: &str,
        prompt: &str,
        continuation: &str,
    ) -> Result<Option<(f64, bool)>, BackendError> {
        let path = self.path_for(&Self::key(identity, prompt, continuation));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| cache_err(&path, e))?;
        if entry.identity != identity || entry.continuation != continuation {
            return Err(cache_err(&path, "entry does not match its key"));
        }
        Ok(Some((entry.score, entry.normalized)))
    }

    /// Write an entry atomically (temp file + rename), so concurrent writers
    /// and readers never observe a partial file.
    pub fn put(
        &self,
        identity: &str,
        prompt: &str,
        continuation: &str,
        score: f64,
        normalized: bool,
    ) -> Result<(), BackendError> {
        let key = Self::key(identity, prompt, continuation);
        let path = self.path_for(&key);
        let parent = path.parent().expect("entry has a shard directory");
        fs::create_dir_all(parent).map_err(|e| cache_err(parent, e))?;
        let entry = CacheEntry {
            identity: identity.to_string(),
            prompt_sha256: sha_hex(prompt.as_bytes()),
            continuation: continuation.to_string(),
            score,
            normalized,
        };
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp).map_err(|e| cache_err(&tmp, e))?;
        f.write_all(&serde_json::to_vec(&entry).expect("entry serializes"))
            .map_err(|e| cache_err(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))?;
        Ok(())
    }
}
