//! Content-addressed response cache keyed on (model, prompt, temperature).
//!
//! On disk every entry is `{sha256}.json` under the cache directory, written
//! to a temporary file and renamed into place.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm_backend::{Backend, BackendError, CompletionRequest, CompletionResponse};

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("corrupt cache entry {0}")]
    CacheCorrupt(PathBuf),
    #[error("cache I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_id: &'a str,
    prompt: &'a str,
    temperature: f64,
}

/// Cache key for a request. `max_output_tokens` is deliberately not part
/// of it.
pub fn cache_key(request: &CompletionRequest) -> String {
    let material = KeyMaterial {
        model_id: &request.model_id,
        prompt: &request.prompt,
        temperature: request.temperature,
    };
    sha256_hex(&serde_json::to_vec(&material).expect("key material serializes"))
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    model_id: String,
    temperature: f64,
    prompt_sha256: String,
    response: CompletionResponse,
}

#[derive(Debug)]
enum Store {
    Memory(Mutex<HashMap<String, CompletionResponse>>),
    Disk { dir: PathBuf, writer: Mutex<()> },
}

#[derive(Debug)]
pub struct ResponseCache {
    store: Store,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            store: Store::Memory(Mutex::default()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| CacheError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            store: Store::Disk {
                dir,
                writer: Mutex::new(()),
            },
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.store {
            Store::Disk { dir, .. } => Some(dir),
            Store::Memory(_) => None,
        }
    }

    pub fn entry_path(&self, key: &str) -> Option<PathBuf> {
        self.dir().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Result<Option<CompletionResponse>, CacheError> {
        match &self.store {
            Store::Memory(m) => Ok(m.lock().unwrap_or_else(|p| p.into_inner()).get(key).cloned()),
            Store::Disk { dir, .. } => {
                let path = dir.join(format!("{key}.json"));
                let bytes = match std::fs::read(&path) {
                    Ok(b) => b,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
                    Err(source) => return Err(CacheError::Io { path, source }),
                };
                match serde_json::from_slice::<Entry>(&bytes) {
                    Ok(entry) if entry.key == key && !entry.response.text.is_empty() => Ok(Some(entry.response)),
                    _ => Err(CacheError::CacheCorrupt(path)),
                }
            }
        }
    }

    pub fn put(&self, request: &CompletionRequest, response: &CompletionResponse) -> Result<String, CacheError> {
        let key = cache_key(request);
        match &self.store {
            Store::Memory(m) => {
                m.lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .insert(key.clone(), response.clone());
            }
            Store::Disk { dir, writer } => {
                let entry = Entry {
                    key: key.clone(),
                    model_id: request.model_id.clone(),
                    temperature: request.temperature,
                    prompt_sha256: sha256_hex(request.prompt.as_bytes()),
                    response: response.clone(),
                };
                let path = dir.join(format!("{key}.json"));
                let io_err = |source| CacheError::Io {
                    path: path.clone(),
                    source,
                };
                let _guard = writer.lock().unwrap_or_else(|p| p.into_inner());
                let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
                serde_json::to_writer_pretty(tmp.as_file(), &entry).map_err(|e| io_err(io::Error::other(e)))?;
                tmp.persist(&path).map_err(|e| io_err(e.error))?;
            }
        }
        Ok(key)
    }
}

/// Outcome of [`cached_complete`].
#[derive(Debug, Clone)]
pub struct CachedCompletion {
    pub response: CompletionResponse,
    pub cache_key: String,
    /// True when the response came from the cache without a backend call.
    pub hit: bool,
    /// Set when a corrupt entry was found and replaced by a fresh call.
    pub recovered_corrupt: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CachedCompleteError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Returns the cached response for `request`, or calls `backend` and stores
/// the result before returning it. A corrupt entry is reported through
/// [`CachedCompletion::recovered_corrupt`] and transparently refetched.
pub fn cached_complete<B: Backend + ?Sized>(
    request: &CompletionRequest,
    cache: &ResponseCache,
    backend: &B,
) -> Result<CachedCompletion, CachedCompleteError> {
    let key = cache_key(request);
    let mut recovered_corrupt = None;
    match cache.get(&key) {
        Ok(Some(response)) => {
            return Ok(CachedCompletion {
                response,
                cache_key: key,
                hit: true,
                recovered_corrupt: None,
            });
        }
        Ok(None) => {}
        Err(CacheError::CacheCorrupt(path)) => {
            log::warn!("cache entry {} is corrupt; refetching", path.display());
            recovered_corrupt = Some(path);
        }
        Err(e) => return Err(e.into()),
    }
    let response = backend.complete(request)?;
    cache.put(request, &response)?;
    Ok(CachedCompletion {
        response,
        cache_key: key,
        hit: false,
        recovered_corrupt,
    })
}
