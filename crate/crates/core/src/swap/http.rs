//! QA endpoint client and response cache.
//!
//! `POST {base_url}/qa` with
//!
//! ```json
//! {"context": "...", "question": "...", "format": "squad_qa",
//!  "candidates": ["Hillary", "Emily"]}
//! ```
//!
//! answered by `{"answer_text": "Hillary", "scores": [0.9, 0.1]}`
//! (`scores` optional). `GET {base_url}/metadata` may report the model's
//! main-task score as `{"task_score": 88.1}`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{QaBackend, QaRequest, QaResponse};
use crate::error::{Error, Result};
use crate::lm::http::{agent, post_json, with_retries, RetryPolicy};
use crate::lm::PROTOCOL_VERSION;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaEndpoint {
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

pub struct HttpQaBackend {
    config: QaEndpoint,
    agent: ureq::Agent,
    retry: RetryPolicy,
    task_score: OnceLock<Option<f64>>,
}

impl HttpQaBackend {
    pub fn new(config: QaEndpoint) -> Self {
        HttpQaBackend {
            agent: agent(config.timeout_ms),
            config,
            retry: RetryPolicy::default(),
            task_score: OnceLock::new(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn base(&self) -> &str {
        self.config.base_url.trim_end_matches('/')
    }
}

pub fn parse_qa_response(value: Value) -> Result<QaResponse> {
    serde_json::from_value(value).map_err(|e| Error::Protocol(format!("unexpected QA response: {e}")))
}

impl QaBackend for HttpQaBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn answer(&self, request: &QaRequest) -> Result<QaResponse> {
        let url = format!("{}/qa", self.base());
        let body = serde_json::to_value(request)?;
        let value = with_retries(self.retry, || post_json(&self.agent, &url, &body))?;
        parse_qa_response(value)
    }

    fn task_score(&self) -> Option<f64> {
        *self.task_score.get_or_init(|| {
            let url = format!("{}/metadata", self.base());
            let resp = self.agent.get(&url).call().ok()?;
            let v: Value = resp.into_json().ok()?;
            v.get("task_score").and_then(Value::as_f64)
        })
    }
}

pub fn qa_cache_key(model_id: &str, request: &QaRequest) -> String {
    let material = json!({
        "protocol": PROTOCOL_VERSION,
        "kind": "qa",
        "model": model_id,
        "request": request,
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    response: QaResponse,
}

/// Content-addressed cache in front of a QA backend, laid out like the
/// completions cache.
pub struct CachedQa<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: QaBackend> CachedQa<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CachedQa { inner, dir })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn read(path: &Path, key: &str) -> Option<QaResponse> {
        let bytes = std::fs::read(path).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(e) if e.key == key => Some(e.response),
            _ => {
                log::warn!("unusable QA cache entry {}; refetching", path.display());
                None
            }
        }
    }

    fn write(path: &Path, entry: &Entry) -> Result<()> {
        let parent = path.parent().expect("cache paths have a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
        serde_json::to_writer(&mut tmp, entry)?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}

impl<B: QaBackend> QaBackend for CachedQa<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn answer(&self, request: &QaRequest) -> Result<QaResponse> {
        let key = qa_cache_key(self.inner.model_id(), request);
        let path = self.path_for(&key);
        if let Some(hit) = Self::read(&path, &key) {
            return Ok(hit);
        }
        let response = self.inner.answer(request)?;
        let entry = Entry { key, response };
        if let Err(e) = Self::write(&path, &entry) {
            log::warn!("could not write QA cache entry: {e}");
        }
        Ok(entry.response)
    }

    fn task_score(&self) -> Option<f64> {
        self.inner.task_score()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swap::mock::FixedAnswerQa;
    use crate::swap::QaFormat;

    fn req() -> QaRequest {
        QaRequest {
            context: "c".into(),
            question: "q".into(),
            format: QaFormat::WinograndeFitb,
            candidates: ["A".into(), "B".into()],
        }
    }

    #[test]
    fn wire_shapes() {
        let body = serde_json::to_value(req()).unwrap();
        assert_eq!(
            body,
            json!({"context": "c", "question": "q", "format": "winogrande_fitb", "candidates": ["A", "B"]})
        );
        let r = parse_qa_response(json!({"answer_text": "A", "scores": [0.7, 0.3]})).unwrap();
        assert_eq!(r.answer_text, "A");
        assert!(parse_qa_response(json!({"answer": "A"})).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedQa::new(FixedAnswerQa::new("m", "A"), dir.path()).unwrap();
        let first = cached.answer(&req()).unwrap();
        let path = cached.path_for(&qa_cache_key("m", &req()));
        assert!(path.exists());
        std::fs::write(&path, "garbage").unwrap();
        assert_eq!(cached.answer(&req()).unwrap(), first);
        assert_ne!(qa_cache_key("m", &req()), qa_cache_key("n", &req()));
    }
}
