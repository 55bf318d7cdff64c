use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use super::{BackendDescriptor, ScoreRequest, ScoreResponse, ScoringBackend, ScoringError};

/// Content-addressed response cache in front of another backend.
///
/// Entries live at `<dir>/<hh>/<sha256>.json`, keyed by the backend name,
/// its fingerprint, and the serialized request.
pub struct CachingBackend<B> {
    inner: B,
    dir: PathBuf,
    misses: AtomicUsize,
    hits: AtomicUsize,
}

impl<B: ScoringBackend> CachingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        CachingBackend { inner, dir: dir.into(), misses: AtomicUsize::new(0), hits: AtomicUsize::new(0) }
    }

    /// Requests forwarded to the wrapped backend.
    pub fn backend_calls(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn key(&self, req: &ScoreRequest) -> String {
        let d = self.inner.descriptor();
        let mut h = Sha256::new();
        for part in [d.name.as_str(), d.fingerprint.as_str(), &serde_json::to_string(req).expect("request serializes")] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ScoringError {
    ScoringError::Cache { path: path.display().to_string(), source }
}

impl<B: ScoringBackend> ScoringBackend for CachingBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ScoringError> {
        let key = self.key(req);
        let path = self.path(&key);
        if let Ok(raw) = fs::read_to_string(&path) {
            if let Ok(resp) = serde_json::from_str(&raw) {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(resp);
            }
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let resp = self.inner.score(req)?;
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        static SEQ: AtomicUsize = AtomicUsize::new(0);
        let tmp = parent.join(format!("{key}.{}.{}.tmp", std::process::id(), SEQ.fetch_add(1, Ordering::SeqCst)));
        fs::write(&tmp, serde_json::to_vec(&resp).expect("response serializes")).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        Ok(resp)
    }
}
