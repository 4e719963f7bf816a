//! Content-addressed on-disk response cache.
//!
//! One file per entry, named by the hex SHA-256 of `(model_name, temperature,
//! prompt)`. The first line of a file is a JSON metadata record; everything
//! after the first newline is the raw response text. Entries are written to a
//! temporary file in the same directory and renamed into place, so concurrent
//! writers never expose partial entries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CompletionRequest;
use crate::model::BackendKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_name: String,
    pub temperature: f64,
    pub backend_kind: BackendKind,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    #[serde(skip)]
    pub response_text: String,
}

/// Cache key for a request.
pub fn cache_key(request: &CompletionRequest) -> String {
    let material = serde_json::to_vec(&(
        request.model_name.as_str(),
        request.temperature,
        request.prompt.as_str(),
    ))
    .expect("cache key material serializes");
    hex::encode(Sha256::digest(&material))
}

#[derive(Debug)]
pub enum Lookup {
    Hit(CacheEntry),
    Miss,
    /// The entry existed but could not be read; it has been moved aside.
    Quarantined(String),
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn lookup(&self, key: &str) -> Lookup {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Lookup::Miss,
            Err(e) => return self.quarantine(&path, format!("read failed: {e}")),
        };
        match decode_entry(key, bytes) {
            Ok(entry) => Lookup::Hit(entry),
            Err(reason) => self.quarantine(&path, reason),
        }
    }

    fn quarantine(&self, path: &Path, reason: String) -> Lookup {
        let mut aside = path.as_os_str().to_owned();
        aside.push(".corrupt");
        if let Err(e) = fs::rename(path, &aside) {
            log::warn!("could not quarantine {}: {e}", path.display());
            let _ = fs::remove_file(path);
        }
        log::warn!(
            "cache entry {} is corrupt ({reason}); treating as miss",
            path.display()
        );
        Lookup::Quarantined(reason)
    }

    pub fn store(
        &self,
        request: &CompletionRequest,
        backend_kind: BackendKind,
        response: &str,
    ) -> std::io::Result<CacheEntry> {
        let entry = CacheEntry {
            key: cache_key(request),
            model_name: request.model_name.clone(),
            temperature: request.temperature,
            backend_kind,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            response_text: response.to_string(),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer(&mut tmp, &entry)?;
        tmp.write_all(b"\n")?;
        tmp.write_all(response.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path_for(&entry.key))
            .map_err(|e| e.error)?;
        Ok(entry)
    }
}

fn decode_entry(key: &str, bytes: Vec<u8>) -> Result<CacheEntry, String> {
    let text = String::from_utf8(bytes).map_err(|_| "not UTF-8".to_string())?;
    let (header, body) = text.split_once('\n').ok_or("missing header line")?;
    let mut entry: CacheEntry =
        serde_json::from_str(header).map_err(|e| format!("bad header: {e}"))?;
    if entry.key != key {
        return Err(format!("header key {} does not match file name", entry.key));
    }
    entry.response_text = body.to_string();
    Ok(entry)
}
