//! Content-addressed response cache.
//!
//! Each request maps to `<dir>/<k0k1>/<key>.json`, where `key` is the SHA-256
//! of the protocol version, model id, prompt, sampling spec (seed included),
//! sample count and logprob width. Values are deterministic per key, so
//! concurrent writers racing on one key are harmless; files are written to a
//! temporary name and renamed into place.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{Completion, CompletionBackend, CompletionRequest, PROTOCOL_VERSION};
use crate::error::{Error, Result};

pub fn cache_key(model_id: &str, request: &CompletionRequest) -> String {
    let material = json!({
        "protocol": PROTOCOL_VERSION,
        "model": model_id,
        "prompt": request.prompt,
        "sampling": request.sampling,
        "n": request.n_samples,
        "logprobs": request.logprob_top_n,
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    completions: Vec<Completion>,
}

pub struct CachedBackend {
    inner: Arc<dyn CompletionBackend>,
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn CompletionBackend>, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CachedBackend {
            inner,
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn read(&self, path: &Path, key: &str) -> Option<Vec<Completion>> {
        let bytes = std::fs::read(path).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.key == key && entry.completions.iter().all(|c| c.check().is_ok()) => {
                Some(entry.completions)
            }
            Ok(_) => {
                log::warn!("cache entry {} does not match its key; refetching", path.display());
                None
            }
            Err(e) => {
                log::warn!("corrupt cache entry {} ({e}); refetching", path.display());
                None
            }
        }
    }

    fn write(&self, path: &Path, entry: &Entry) -> Result<()> {
        let parent = path.parent().expect("cache paths have a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
        serde_json::to_writer(&mut tmp, entry)?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}

impl CompletionBackend for CachedBackend {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, request: &CompletionRequest) -> Result<Vec<Completion>> {
        let key = cache_key(self.inner.model_id(), request);
        let path = self.path_for(&key);
        if let Some(hit) = self.read(&path, &key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let completions = self.inner.generate(request)?;
        let entry = Entry { key, completions };
        if let Err(e) = self.write(&path, &entry) {
            log::warn!("could not write cache entry: {e}");
        }
        Ok(entry.completions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::mock::{MockModel, MockRule};
    use crate::lm::{complete, SamplingSpec};

    fn setup() -> (Arc<MockModel>, CachedBackend, tempfile::TempDir) {
        let mock = Arc::new(
            MockModel::new("mock", vec![MockRule::uniform("", &["a", "b", "c"], "")]).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(mock.clone(), dir.path()).unwrap();
        (mock, cached, dir)
    }

    #[test]
    fn second_call_is_served_from_disk() {
        let (mock, cached, _dir) = setup();
        let req = CompletionRequest::new("x", SamplingSpec::nucleus(0.9, 8, 3));
        let first = complete(&cached, &req).unwrap();
        let second = complete(&cached, &req).unwrap();
        assert_eq!(first, second);
        assert_eq!(mock.requests(), 1);
        assert_eq!(cached.hits(), 1);
    }

    #[test]
    fn seed_changes_key() {
        let a = CompletionRequest::new("x", SamplingSpec::nucleus(0.9, 8, 3));
        let b = CompletionRequest::new("x", SamplingSpec::nucleus(0.9, 8, 4));
        assert_ne!(cache_key("m", &a), cache_key("m", &b));
        assert_ne!(cache_key("m", &a), cache_key("n", &a));
    }

    #[test]
    fn corrupt_entry_is_refetched_and_rewritten() {
        let (mock, cached, _dir) = setup();
        let req = CompletionRequest::new("x", SamplingSpec::nucleus(0.9, 8, 3));
        let first = complete(&cached, &req).unwrap();
        let path = cached.path_for(&cache_key("mock", &req));
        std::fs::write(&path, b"{not json").unwrap();
        let again = complete(&cached, &req).unwrap();
        assert_eq!(first, again);
        assert_eq!(mock.requests(), 2);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(serde_json::from_str::<serde_json::Value>(&text).is_ok());
        complete(&cached, &req).unwrap();
        assert_eq!(mock.requests(), 2);
    }
}
