//! Content-addressed prediction cache, one JSON file per prediction at
//! `<root>/<model>/<digest[..2]>/<digest>.json`.
//!
//! Reads take no lock. Writes are serialized and land via rename, so readers
//! never see a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ApiKind, ChoiceSet, ElicitError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub model: String,
    pub api: ApiKind,
    pub prompt_sha256: String,
    pub choices: ChoiceSet,
    pub top_logprobs: u32,
}

impl CacheKey {
    pub fn new(model: &str, api: ApiKind, prompt: &str, choices: &ChoiceSet, top_logprobs: u32) -> Self {
        Self {
            model: model.to_string(),
            api,
            prompt_sha256: hex::encode(Sha256::digest(prompt.as_bytes())),
            choices: choices.clone(),
            top_logprobs,
        }
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("key serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Extracted prediction as stored alongside the raw logprobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedChoice {
    pub probs: Vec<f64>,
    pub raw_choice_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub request: serde_json::Value,
    pub top_logprobs: Vec<(String, f64)>,
    /// `None` when extraction failed (for example on low coverage).
    pub prediction: Option<CachedChoice>,
}

impl CacheEntry {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ElicitError> {
        serde_json::from_slice(bytes).map_err(|e| ElicitError::Cache(format!("malformed cache entry: {e}")))
    }
}

#[derive(Debug)]
pub struct PredictionCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

fn path_component(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if cleaned.is_empty() || cleaned.chars().all(|c| c == '.') {
        format!("_{cleaned}")
    } else {
        cleaned
    }
}

impl PredictionCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), write_lock: Mutex::new(()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let digest = key.digest();
        self.root.join(path_component(&key.model)).join(&digest[..2]).join(format!("{digest}.json"))
    }

    /// Returns the stored entry, or `None` on a miss. Unreadable or
    /// mismatched entries count as misses and are overwritten later.
    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        let path = self.path_for(key);
        let bytes = fs::read(&path).ok()?;
        match CacheEntry::from_json(&bytes) {
            Ok(entry) if &entry.key == key => Some(entry),
            Ok(_) => {
                log::warn!("cache entry {} does not match its key; ignoring", path.display());
                None
            }
            Err(e) => {
                log::warn!("{}: {e}; ignoring", path.display());
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), ElicitError> {
        let path = self.path_for(&entry.key);
        let dir = path.parent().expect("cache path has a parent");
        let io = |e: std::io::Error| ElicitError::Cache(format!("{}: {e}", path.display()));
        let bytes = serde_json::to_vec_pretty(entry).expect("entry serializes");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = dir.join(format!(".{}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&bytes).map_err(io)?;
            f.write_all(b"\n").map_err(io)?;
        }
        fs::rename(&tmp, &path).map_err(io)
    }
}
