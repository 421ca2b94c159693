use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenerateError, Generator, SamplingConfig};

/// SHA-256 over model id, prompt bytes and the exact sampling parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(model_id: &str, prompt: &str, cfg: &SamplingConfig) -> Self {
        let mut h = Sha256::new();
        for part in [model_id.as_bytes(), prompt.as_bytes()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        h.update(cfg.nucleus_p.to_bits().to_le_bytes());
        h.update(cfg.temperature.to_bits().to_le_bytes());
        h.update(cfg.max_new_tokens.to_le_bytes());
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    model_id: String,
    response: String,
}

/// Content-addressed response files under one directory.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache {
            dir: dir.into(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    /// Returns the stored response. Unreadable or mismatched entries are
    /// removed and reported as a miss.
    pub fn get(&self, key: &CacheKey) -> std::io::Result<Option<String>> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.key == key.0 => Ok(Some(entry.response)),
            _ => {
                log::warn!("evicting corrupt cache entry {}", path.display());
                let _ = fs::remove_file(&path);
                Ok(None)
            }
        }
    }

    /// Writes through a temp file and rename, so readers never see a torn entry.
    pub fn put(&self, key: &CacheKey, model_id: &str, response: &str) -> std::io::Result<()> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        serde_json::to_writer(
            &mut tmp,
            &Entry {
                key: key.0.clone(),
                model_id: model_id.to_string(),
                response: response.to_string(),
            },
        )?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Serves from `cache` when possible, otherwise calls `client` and stores the
/// result. Cache I/O failures are logged and bypassed.
pub fn cached_generate(
    client: &dyn Generator,
    cache: &ResponseCache,
    prompt: &str,
    cfg: &SamplingConfig,
) -> Result<String, GenerateError> {
    let key = CacheKey::new(client.model_id(), prompt, cfg);
    match cache.get(&key) {
        Ok(Some(hit)) => {
            cache.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        Ok(None) => {}
        Err(e) => log::warn!("cache read failed ({e}); calling backend"),
    }
    cache.misses.fetch_add(1, Ordering::SeqCst);
    let out = client.generate(prompt, cfg)?;
    if let Err(e) = cache.put(&key, client.model_id(), &out) {
        log::warn!("cache write failed: {e}");
    }
    Ok(out)
}

/// A generator whose calls go through a [`ResponseCache`].
pub struct CachedGenerator<G> {
    inner: G,
    cache: std::sync::Arc<ResponseCache>,
}

impl<G: Generator> CachedGenerator<G> {
    pub fn new(inner: G, cache: std::sync::Arc<ResponseCache>) -> Self {
        CachedGenerator { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl<G: Generator> Generator for CachedGenerator<G> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError> {
        cached_generate(&self.inner, &self.cache, prompt, cfg)
    }
}
