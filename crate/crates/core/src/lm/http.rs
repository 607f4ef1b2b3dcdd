//! Client for a completions-style HTTP JSON endpoint.
//!
//! Request body (`POST {base_url}/completions`):
//!
//! ```json
//! {"model": "gpt2", "prompt": "Donald", "max_tokens": 5, "temperature": 0.0,
//!  "n": 1, "logprobs": 5, "seed": 42}
//! ```
//!
//! Sampled requests set `"temperature": 1.0` plus `"top_p"` or `"top_k"`.
//! The response carries one choice per sample:
//!
//! ```json
//! {"model": "gpt2",
//!  "choices": [{"index": 0, "text": " Trump", "finish_reason": "length",
//!               "logprobs": {"tokens": [" Trump"], "token_logprobs": [-0.01],
//!                            "top_logprobs": [{" Trump": -0.01, " is": -4.6}]}}]}
//! ```
//!
//! A server that ignores `seed` may say so with `"seed_supported": false`;
//! the client logs a warning once.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Completion, CompletionBackend, CompletionRequest, FinishReason, SamplingMode, TokenLogprob};
use crate::error::{Error, Result};

/// Environment variable holding a bearer token, if the endpoint needs one.
pub const AUTH_ENV: &str = "NAMEPROBE_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

/// Retry policy for transport failures: `attempts` tries in total, sleeping
/// `base_backoff * 2^i` between them.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_backoff: Duration::from_millis(500),
        }
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// policy is exhausted.
pub fn with_retries<T>(policy: RetryPolicy, mut op: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_retryable() && attempt + 1 < policy.attempts => {
                let wait = policy.base_backoff * 2u32.pow(attempt);
                log::warn!("attempt {} failed ({e}); retrying in {wait:?}", attempt + 1);
                std::thread::sleep(wait);
                attempt += 1;
            }
            other => return other,
        }
    }
}

pub(crate) fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout(Duration::from_millis(timeout_ms))
        .build()
}

/// POSTs `body` as JSON and decodes a JSON response, mapping failures onto
/// retryable transport errors (connection problems, 429, 5xx) or protocol
/// errors (everything else).
pub(crate) fn post_json(agent: &ureq::Agent, url: &str, body: &Value) -> Result<Value> {
    let mut req = agent.post(url).set("Content-Type", "application/json");
    if let Ok(token) = std::env::var(AUTH_ENV) {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    match req.send_string(&body.to_string()) {
        Ok(resp) => {
            let text = resp
                .into_string()
                .map_err(|e| Error::Transport(format!("reading response from {url}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Protocol(format!("malformed JSON from {url}: {e}")))
        }
        Err(ureq::Error::Status(code, resp)) => {
            let detail = resp.into_string().unwrap_or_default();
            if code == 429 || code >= 500 {
                Err(Error::Transport(format!("{url} returned {code}: {detail}")))
            } else {
                Err(Error::Protocol(format!("{url} returned {code}: {detail}")))
            }
        }
        Err(ureq::Error::Transport(t)) => Err(Error::Transport(format!("{url}: {t}"))),
    }
}

pub struct HttpCompletionBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
    retry: RetryPolicy,
    warned_seed: AtomicBool,
}

impl HttpCompletionBackend {
    pub fn new(config: EndpointConfig) -> Self {
        HttpCompletionBackend {
            agent: agent(config.timeout_ms),
            config,
            retry: RetryPolicy::default(),
            warned_seed: AtomicBool::new(false),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }
}

/// Wire body for a request.
pub fn request_body(model_id: &str, request: &CompletionRequest) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), model_id.into());
    body.insert("prompt".into(), request.prompt.clone().into());
    body.insert("max_tokens".into(), request.sampling.max_tokens.into());
    match request.sampling.mode {
        SamplingMode::Greedy => {
            body.insert("temperature".into(), 0.0.into());
        }
        SamplingMode::Nucleus { p } => {
            body.insert("temperature".into(), 1.0.into());
            body.insert("top_p".into(), p.into());
        }
        SamplingMode::TopK { k } => {
            body.insert("temperature".into(), 1.0.into());
            body.insert("top_k".into(), k.into());
        }
    }
    body.insert("n".into(), request.n_samples.into());
    body.insert("logprobs".into(), request.logprob_top_n.into());
    body.insert("seed".into(), request.sampling.seed.into());
    Value::Object(body)
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<WireChoice>,
    #[serde(default)]
    seed_supported: Option<bool>,
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    index: Option<usize>,
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<f64>,
    #[serde(default)]
    top_logprobs: Vec<Option<Map<String, Value>>>,
}

/// Decodes a response body into completions ordered by choice index.
pub fn parse_response(model_id: &str, value: Value) -> Result<(Vec<Completion>, Option<bool>)> {
    let wire: WireResponse = serde_json::from_value(value)
        .map_err(|e| Error::Protocol(format!("unexpected completions response: {e}")))?;
    let model = wire.model.unwrap_or_else(|| model_id.to_string());
    let mut choices = wire.choices;
    choices.sort_by_key(|c| c.index.unwrap_or(0));
    let mut out = Vec::with_capacity(choices.len());
    for choice in choices {
        let lp = choice
            .logprobs
            .ok_or_else(|| Error::Protocol("choice is missing logprobs".into()))?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(Error::Protocol("tokens and token_logprobs differ in length".into()));
        }
        let mut tokens = Vec::with_capacity(lp.tokens.len());
        for (i, (token, logprob)) in lp.tokens.into_iter().zip(lp.token_logprobs).enumerate() {
            let mut alts: Vec<(String, f64)> = match lp.top_logprobs.get(i) {
                Some(Some(map)) => map
                    .iter()
                    .map(|(t, v)| {
                        v.as_f64()
                            .map(|f| (t.clone(), f))
                            .ok_or_else(|| Error::Protocol(format!("non-numeric logprob for {t:?}")))
                    })
                    .collect::<Result<_>>()?,
                _ => Vec::new(),
            };
            alts.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            tokens.push(TokenLogprob {
                token,
                logprob: logprob.min(0.0),
                top_alternatives: alts,
            });
        }
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") => FinishReason::Stop,
            _ => FinishReason::Length,
        };
        let completion = Completion {
            text: choice.text,
            tokens,
            model_id: model.clone(),
            finish_reason,
        };
        completion.check()?;
        out.push(completion);
    }
    Ok((out, wire.seed_supported))
}

impl CompletionBackend for HttpCompletionBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn generate(&self, request: &CompletionRequest) -> Result<Vec<Completion>> {
        request.validate()?;
        let body = request_body(&self.config.model_id, request);
        let url = self.url();
        let value = with_retries(self.retry, || post_json(&self.agent, &url, &body))?;
        let (completions, seed_supported) = parse_response(&self.config.model_id, value)?;
        if seed_supported == Some(false) && !self.warned_seed.swap(true, Ordering::Relaxed) {
            log::warn!(
                "{} does not honor seeds; sampled results will not be reproducible",
                self.config.model_id
            );
        }
        Ok(completions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::SamplingSpec;
    use serde_json::json;

    #[test]
    fn body_fields_per_mode() {
        let greedy = request_body("gpt2", &CompletionRequest::new("Donald", SamplingSpec::greedy(5)));
        assert_eq!(
            greedy,
            json!({"model": "gpt2", "prompt": "Donald", "max_tokens": 5, "temperature": 0.0,
                   "n": 1, "logprobs": 0, "seed": 0})
        );
        let nuc = request_body("gpt2", &CompletionRequest::new("x", SamplingSpec::nucleus(0.9, 150, 7)));
        assert_eq!(nuc["top_p"], json!(0.9));
        assert_eq!(nuc["seed"], json!(7));
        let topk = request_body("gpt2", &CompletionRequest::new("x", SamplingSpec::top_k(25, 150, 7)));
        assert_eq!(topk["top_k"], json!(25));
        assert!(topk.get("top_p").is_none());
    }

    #[test]
    fn parses_and_sorts_alternatives() {
        let (c, seed) = parse_response(
            "gpt2",
            json!({"choices": [{"index": 0, "text": " Trump", "finish_reason": "length",
                "logprobs": {"tokens": [" Trump"], "token_logprobs": [-0.01],
                             "top_logprobs": [{" is": -4.6, " Trump": -0.01}]}}]}),
        )
        .unwrap();
        assert_eq!(seed, None);
        assert_eq!(c[0].model_id, "gpt2");
        assert_eq!(c[0].tokens[0].top_alternatives[0].0, " Trump");
    }

    #[test]
    fn rejects_inconsistent_text() {
        let err = parse_response(
            "gpt2",
            json!({"choices": [{"text": " Trump", "logprobs": {"tokens": [" Tr"], "token_logprobs": [-0.1]}}]}),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        let err = parse_response("gpt2", json!({"choices": [{"text": "x"}]})).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn retries_only_transport_errors() {
        let policy = RetryPolicy {
            attempts: 3,
            base_backoff: Duration::from_millis(1),
        };
        let mut calls = 0;
        let r: Result<()> = with_retries(policy, || {
            calls += 1;
            Err(Error::Transport("down".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls, 3);

        let mut calls = 0;
        let r: Result<()> = with_retries(policy, || {
            calls += 1;
            Err(Error::Protocol("bad".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);

        let mut calls = 0;
        let r = with_retries(policy, || {
            calls += 1;
            if calls < 3 {
                Err(Error::Transport("flaky".into()))
            } else {
                Ok(calls)
            }
        });
        assert_eq!(r.unwrap(), 3);
    }
}
