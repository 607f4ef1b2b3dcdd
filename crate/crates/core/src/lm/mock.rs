//! Scripted language model for offline tests and dry runs.
//!
//! A [`MockModel`] is a list of [`MockRule`]s. At every decoding step the
//! context (prompt plus text generated so far) is matched against the rules'
//! suffix patterns; the longest matching pattern wins, ties going to the rule
//! declared first. An empty pattern matches any context.
//!
//! When a rule fires it emits one token drawn from its distribution (greedy,
//! nucleus or top-k, as requested) and then queues its `continuation`, which
//! is emitted verbatim on the following steps. Once the queue is empty and no
//! rule matches the context, the rule that fired last fires again; with no
//! such rule, or when [`EOS`] is drawn, generation stops.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Completion, CompletionBackend, CompletionRequest, FinishReason, SamplingMode, TokenLogprob};
use crate::error::{Error, Result};
use crate::seed;

/// End-of-text marker a distribution may contain.
pub const EOS: &str = "<|endoftext|>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub prompt_suffix_pattern: String,
    pub next_token_distribution: BTreeMap<String, f64>,
    #[serde(default)]
    pub continuation: String,
}

impl MockRule {
    pub fn new(pattern: &str, dist: &[(&str, f64)], continuation: &str) -> Self {
        MockRule {
            prompt_suffix_pattern: pattern.to_string(),
            next_token_distribution: dist.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
            continuation: continuation.to_string(),
        }
    }

    /// Uniform distribution over `words`.
    pub fn uniform(pattern: &str, words: &[&str], continuation: &str) -> Self {
        let p = 1.0 / words.len() as f64;
        let dist: Vec<(&str, f64)> = words.iter().map(|w| (*w, p)).collect();
        Self::new(pattern, &dist, continuation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.next_token_distribution.is_empty() {
            return Err(Error::InvalidRequest(format!(
                "rule `{}` has an empty distribution",
                self.prompt_suffix_pattern
            )));
        }
        if self.next_token_distribution.values().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidRequest(format!(
                "rule `{}` has a probability outside (0, 1]",
                self.prompt_suffix_pattern
            )));
        }
        let total: f64 = self.next_token_distribution.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRequest(format!(
                "rule `{}` distribution sums to {total}",
                self.prompt_suffix_pattern
            )));
        }
        Ok(())
    }

    /// Entries by descending probability, ties by token.
    fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self
            .next_token_distribution
            .iter()
            .map(|(t, p)| (t.as_str(), *p))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

#[derive(Debug)]
pub struct MockModel {
    model_id: String,
    rules: Vec<MockRule>,
    requests: AtomicUsize,
}

impl MockModel {
    pub fn new(model_id: impl Into<String>, rules: Vec<MockRule>) -> Result<Self> {
        for r in &rules {
            r.validate()?;
        }
        Ok(MockModel {
            model_id: model_id.into(),
            rules,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    /// Number of `generate` calls served so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn find_rule(&self, context: &str) -> Option<usize> {
        let ctx = context.trim_end();
        let mut best: Option<(usize, usize)> = None;
        for (i, rule) in self.rules.iter().enumerate() {
            let pat = rule.prompt_suffix_pattern.trim();
            if !ctx.ends_with(pat) {
                continue;
            }
            let before = ctx[..ctx.len() - pat.len()].chars().next_back();
            let starts_word = pat.chars().next().is_some_and(|c| c.is_alphanumeric());
            if starts_word && before.is_some_and(|c| c.is_alphanumeric()) {
                continue;
            }
            if best.is_none_or(|(_, len)| pat.len() > len) {
                best = Some((i, pat.len()));
            }
        }
        best.map(|(i, _)| i)
    }

    fn sample_one(&self, request: &CompletionRequest, sample_seed: u64) -> Completion {
        let mut rng = seed::rng(sample_seed);
        let mut context = request.prompt.clone();
        let mut tokens = Vec::new();
        let mut queue: VecDeque<String> = VecDeque::new();
        let mut active: Option<usize> = None;
        let mut finish = FinishReason::Length;
        let top_n = request.logprob_top_n as usize;

        while tokens.len() < request.sampling.max_tokens as usize {
            if let Some(tok) = queue.pop_front() {
                let alts = if top_n > 0 { vec![(tok.clone(), 0.0)] } else { vec![] };
                context.push_str(&tok);
                tokens.push(TokenLogprob {
                    token: tok,
                    logprob: 0.0,
                    top_alternatives: alts,
                });
                continue;
            }
            let Some(idx) = self.find_rule(&context).or(active) else {
                finish = FinishReason::Stop;
                break;
            };
            active = Some(idx);
            let rule = &self.rules[idx];
            let ranked = rule.ranked();
            let (choice, prob) = choose(&ranked, request.sampling.mode, &mut rng);
            if choice == EOS {
                finish = FinishReason::Stop;
                break;
            }
            let display = |t: &str| display_token(t, &context);
            let mut alts: Vec<(String, f64)> = ranked
                .iter()
                .take(top_n)
                .map(|(t, p)| (display(t), p.ln()))
                .collect();
            let shown = display(choice);
            if top_n > 0 && !alts.iter().any(|(t, _)| *t == shown) {
                alts.push((shown.clone(), prob.ln()));
            }
            context.push_str(&shown);
            tokens.push(TokenLogprob {
                token: shown,
                logprob: prob.ln(),
                top_alternatives: alts,
            });
            queue = split_continuation(&rule.continuation).into();
        }

        Completion {
            text: tokens.iter().map(|t| t.token.as_str()).collect(),
            tokens,
            model_id: self.model_id.clone(),
            finish_reason: finish,
        }
    }
}

impl CompletionBackend for MockModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, request: &CompletionRequest) -> Result<Vec<Completion>> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        Ok((0..request.n_samples)
            .map(|j| {
                let s = if j == 0 {
                    request.sampling.seed
                } else {
                    seed::derive(request.sampling.seed, u64::from(j))
                };
                self.sample_one(request, s)
            })
            .collect())
    }
}

fn choose<'a>(ranked: &[(&'a str, f64)], mode: SamplingMode, rng: &mut impl Rng) -> (&'a str, f64) {
    let keep = match mode {
        SamplingMode::Greedy => return ranked[0],
        SamplingMode::TopK { k } => (k as usize).min(ranked.len()),
        SamplingMode::Nucleus { p } => {
            let mut cum = 0.0;
            let mut n = ranked.len();
            for (i, (_, q)) in ranked.iter().enumerate() {
                cum += q;
                if cum >= p - 1e-12 {
                    n = i + 1;
                    break;
                }
            }
            n
        }
    };
    let pool = &ranked[..keep];
    let total: f64 = pool.iter().map(|(_, q)| q).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(t, q) in pool {
        if u < q {
            return (t, q);
        }
        u -= q;
    }
    pool[pool.len() - 1]
}

/// Word-like tokens get a leading space unless the context already ends in
/// whitespace; punctuation attaches directly.
fn display_token(token: &str, context: &str) -> String {
    let wordlike = token.chars().any(|c| c.is_alphanumeric());
    let starts_ws = token.starts_with(char::is_whitespace);
    if !wordlike || starts_ws || context.is_empty() || context.ends_with(char::is_whitespace) {
        token.to_string()
    } else {
        format!(" {token}")
    }
}

/// Splits text into tokens that keep their leading whitespace, so joining the
/// pieces reproduces the input exactly.
pub fn split_continuation(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\s*[\p{L}\p{N}']+|\s*[^\s\p{L}\p{N}']|\s+$").unwrap());
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}
