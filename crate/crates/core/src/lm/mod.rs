//! Language-model access over a completions-style protocol.
//!
//! Everything a probe needs from a model goes through [`CompletionBackend`]:
//! greedy rollouts, sampled endings and next-token distributions. Three
//! backends ship with the crate: [`mock::MockModel`] (scripted, fully
//! deterministic), [`http::HttpCompletionBackend`] (a completions JSON
//! endpoint) and [`cache::CachedBackend`], which wraps either of the others
//! with a content-addressed response store.

pub mod cache;
pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::seed;

/// Bumped whenever the request or response layout changes; part of every
/// cache key.
pub const PROTOCOL_VERSION: u32 = 1;

/// Most alternatives a request may ask for per position.
pub const MAX_LOGPROB_TOP_N: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingMode {
    Greedy,
    Nucleus { p: f64 },
    TopK { k: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub mode: SamplingMode,
    pub max_tokens: u32,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn greedy(max_tokens: u32) -> Self {
        SamplingSpec {
            mode: SamplingMode::Greedy,
            max_tokens,
            seed: 0,
        }
    }

    pub fn nucleus(p: f64, max_tokens: u32, seed: u64) -> Self {
        SamplingSpec {
            mode: SamplingMode::Nucleus { p },
            max_tokens,
            seed,
        }
    }

    pub fn top_k(k: u32, max_tokens: u32, seed: u64) -> Self {
        SamplingSpec {
            mode: SamplingMode::TopK { k },
            max_tokens,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SamplingSpec { seed, ..self }
    }

    pub fn is_sampled(&self) -> bool {
        !matches!(self.mode, SamplingMode::Greedy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest("max_tokens must be at least 1".into()));
        }
        match self.mode {
            SamplingMode::Nucleus { p } if !(p > 0.0 && p <= 1.0) => Err(Error::InvalidRequest(
                format!("nucleus p must lie in (0, 1], got {p}"),
            )),
            SamplingMode::TopK { k: 0 } => {
                Err(Error::InvalidRequest("top-k requires k >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short label used in file names, e.g. `nucleus-p0.9-l150`.
    pub fn label(&self) -> String {
        match self.mode {
            SamplingMode::Greedy => format!("greedy-l{}", self.max_tokens),
            SamplingMode::Nucleus { p } => format!("nucleus-p{p}-l{}", self.max_tokens),
            SamplingMode::TopK { k } => format!("topk-k{k}-l{}", self.max_tokens),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub sampling: SamplingSpec,
    pub logprob_top_n: u32,
    pub n_samples: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, sampling: SamplingSpec) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            sampling,
            logprob_top_n: 0,
            n_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        if self.n_samples == 0 {
            return Err(Error::InvalidRequest("n_samples must be at least 1".into()));
        }
        if self.logprob_top_n > MAX_LOGPROB_TOP_N {
            return Err(Error::InvalidRequest(format!(
                "logprob_top_n {} exceeds the protocol maximum {MAX_LOGPROB_TOP_N}",
                self.logprob_top_n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    /// Sorted by descending log-probability.
    pub top_alternatives: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Length,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
    pub model_id: String,
    pub finish_reason: FinishReason,
}

impl Completion {
    pub fn check(&self) -> Result<()> {
        let joined: String = self.tokens.iter().map(|t| t.token.as_str()).collect();
        if joined != self.text {
            return Err(Error::Protocol(format!(
                "token strings {joined:?} do not reconstruct text {:?}",
                self.text
            )));
        }
        for t in &self.tokens {
            if !t.logprob.is_finite() || t.logprob > 1e-9 {
                return Err(Error::Protocol(format!(
                    "token {:?} has invalid logprob {}",
                    t.token, t.logprob
                )));
            }
            if t.top_alternatives.windows(2).any(|w| w[0].1 < w[1].1) {
                return Err(Error::Protocol(format!(
                    "alternatives for {:?} are not sorted",
                    t.token
                )));
            }
        }
        Ok(())
    }
}

/// A model reachable over the completions protocol.
pub trait CompletionBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Returns one completion per requested sample. Callers go through
    /// [`complete`], which validates the request and the response shape.
    fn generate(&self, request: &CompletionRequest) -> Result<Vec<Completion>>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn generate(&self, request: &CompletionRequest) -> Result<Vec<Completion>> {
        (**self).generate(request)
    }
}

pub fn complete(
    backend: &(impl CompletionBackend + ?Sized),
    request: &CompletionRequest,
) -> Result<Vec<Completion>> {
    request.validate()?;
    let out = backend.generate(request)?;
    if out.len() != request.n_samples as usize {
        return Err(Error::Protocol(format!(
            "asked for {} completions, received {}",
            request.n_samples,
            out.len()
        )));
    }
    for c in &out {
        c.check()?;
    }
    Ok(out)
}

/// Greedy continuation of `prompt`, at most `max_tokens` tokens.
pub fn greedy_text(
    backend: &(impl CompletionBackend + ?Sized),
    prompt: &str,
    max_tokens: u32,
) -> Result<String> {
    let mut out = complete(
        backend,
        &CompletionRequest::new(prompt, SamplingSpec::greedy(max_tokens)),
    )?;
    Ok(out.remove(0).text)
}

/// Top next-token candidates with probabilities, highest first.
///
/// Candidates that differ only by surrounding whitespace (`"Trump"` and
/// `" Trump"`) are reported once, under the trimmed form, with their mass
/// summed.
pub fn next_token_distribution(
    backend: &(impl CompletionBackend + ?Sized),
    prompt: &str,
    top_n: u32,
) -> Result<Vec<(String, f64)>> {
    if top_n == 0 {
        return Err(Error::InvalidRequest("top_n must be at least 1".into()));
    }
    let request = CompletionRequest {
        logprob_top_n: top_n,
        ..CompletionRequest::new(prompt, SamplingSpec::greedy(1))
    };
    let completion = complete(backend, &request)?.remove(0);
    let first = completion
        .tokens
        .first()
        .ok_or_else(|| Error::Protocol("completion has no tokens".into()))?;

    let mut merged: Vec<(String, f64)> = Vec::new();
    let source: Vec<(String, f64)> = if first.top_alternatives.is_empty() {
        vec![(first.token.clone(), first.logprob)]
    } else {
        first.top_alternatives.clone()
    };
    for (tok, lp) in source {
        let key = tok.trim().to_string();
        let p = lp.exp();
        match merged.iter_mut().find(|(t, _)| *t == key) {
            Some(entry) => entry.1 += p,
            None => merged.push((key, p)),
        }
    }
    merged.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    merged.truncate(top_n as usize);
    for entry in &mut merged {
        entry.1 = entry.1.min(1.0);
    }
    Ok(merged)
}

/// Seed used for ending `index` of a corpus sampled under `master`.
pub fn ending_seed(master: u64, index: usize) -> u64 {
    seed::derive(master, index as u64)
}

/// A single sampled ending; `sample_endings` is this over `0..count`.
pub fn sample_ending(
    backend: &(impl CompletionBackend + ?Sized),
    prompt: &str,
    sampling: &SamplingSpec,
    index: usize,
) -> Result<String> {
    if !sampling.is_sampled() {
        return Err(Error::InvalidRequest(
            "endings require nucleus or top-k sampling".into(),
        ));
    }
    let spec = sampling.with_seed(ending_seed(sampling.seed, index));
    let mut out = complete(backend, &CompletionRequest::new(prompt, spec))?;
    Ok(out.remove(0).text)
}

/// `count` sampled continuations of `prompt`. Each ending is requested on its
/// own with a sub-seed derived from the master seed and its index, so any
/// subset can be regenerated (or served from cache) independently.
pub fn sample_endings(
    backend: &(impl CompletionBackend + ?Sized),
    prompt: &str,
    sampling: &SamplingSpec,
    count: usize,
    exec: Exec,
) -> Result<Vec<String>> {
    sampling.validate()?;
    if !sampling.is_sampled() {
        return Err(Error::InvalidRequest(
            "endings require nucleus or top-k sampling".into(),
        ));
    }
    if count == 0 {
        return Err(Error::InvalidRequest("count must be at least 1".into()));
    }
    let indices: Vec<usize> = (0..count).collect();
    exec.map(&indices, |&i| sample_ending(backend, prompt, sampling, i))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::mock::{MockModel, MockRule};
    use super::*;

    fn donald() -> MockModel {
        MockModel::new("mock", vec![MockRule::new("Donald", &[("Trump", 0.99), ("is", 0.01)], "")])
            .unwrap()
    }

    #[test]
    fn greedy_single_token() {
        assert_eq!(greedy_text(&donald(), "Donald", 1).unwrap(), " Trump");
    }

    #[test]
    fn zero_max_tokens_is_rejected() {
        let err = greedy_text(&donald(), "Donald", 0).unwrap_err();
        assert!(matches!(err, Error::InvalidRequest(_)));
    }

    #[test]
    fn greedy_samples_are_identical() {
        let req = CompletionRequest {
            n_samples: 3,
            ..CompletionRequest::new("Donald", SamplingSpec { seed: 9, ..SamplingSpec::greedy(4) })
        };
        let out = complete(&donald(), &req).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c == &out[0]));
    }

    #[test]
    fn distribution_from_mock() {
        let dist = next_token_distribution(&donald(), "A new report says that Donald", 5).unwrap();
        assert_eq!(dist.len(), 2);
        assert_eq!(dist[0].0, "Trump");
        assert!((dist[0].1 - 0.99).abs() < 1e-12);
        assert_eq!(dist[1].0, "is");
        assert!((dist[1].1 - 0.01).abs() < 1e-12);
        assert_eq!(next_token_distribution(&donald(), "Donald", 1).unwrap().len(), 1);
        assert!(next_token_distribution(&donald(), "Donald", 0).is_err());
    }

    #[test]
    fn endings_need_sampling() {
        let err = sample_endings(&donald(), "Donald", &SamplingSpec::greedy(5), 2, Exec::Sequential)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidRequest(_)));
        let spec = SamplingSpec::nucleus(0.9, 5, 1);
        assert!(sample_endings(&donald(), "Donald", &spec, 0, Exec::Sequential).is_err());
    }

    #[test]
    fn sampling_spec_validation() {
        assert!(SamplingSpec::nucleus(0.0, 5, 0).validate().is_err());
        assert!(SamplingSpec::nucleus(1.0, 5, 0).validate().is_ok());
        assert!(SamplingSpec::nucleus(1.1, 5, 0).validate().is_err());
        assert!(SamplingSpec::top_k(0, 5, 0).validate().is_err());
        assert_eq!(SamplingSpec::top_k(25, 150, 0).label(), "topk-k25-l150");
        let req = CompletionRequest {
            logprob_top_n: 101,
            ..CompletionRequest::new("x", SamplingSpec::greedy(1))
        };
        assert!(req.validate().is_err());
    }
}
