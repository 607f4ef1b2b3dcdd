//! Sentiment skew: rank names by the average negative sentiment of their
//! "is a" endings.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lm::http::{agent, post_json, with_retries, RetryPolicy};
use crate::par::Exec;
use crate::recovery::EndingCorpus;
use crate::stats;
use crate::textml::{tokenize, TokenizerConfig};

/// Scores a batch of texts. `None` marks a text the provider could not score.
pub trait SentimentProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    /// Negative-class probability per text, in input order.
    fn score_batch(&self, texts: &[String]) -> Result<Vec<Option<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub negative_probability: f64,
}

/// Scores `texts` in batches of `batch_size`, checking length and bounds.
pub fn score_texts(
    provider: &dyn SentimentProvider,
    texts: &[String],
    batch_size: usize,
    exec: Exec,
) -> Result<Vec<Option<SentimentScore>>> {
    if batch_size == 0 {
        return Err(Error::InvalidRequest("batch size must be at least 1".into()));
    }
    let batches: Vec<&[String]> = texts.chunks(batch_size).collect();
    let scored = exec.map(&batches, |batch| {
        let out = provider.score_batch(batch)?;
        if out.len() != batch.len() {
            return Err(Error::Protocol(format!(
                "{} returned {} scores for {} texts",
                provider.provider_id(),
                out.len(),
                batch.len()
            )));
        }
        out.into_iter()
            .map(|s| match s {
                Some(p) if (0.0..=1.0).contains(&p) => Ok(Some(SentimentScore { negative_probability: p })),
                Some(p) => Err(Error::Protocol(format!("negative probability {p} outside [0, 1]"))),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut all = Vec::with_capacity(texts.len());
    for batch in scored {
        all.extend(batch?);
    }
    Ok(all)
}

/// Bag-of-words scorer: `σ(negative hits − positive hits)`.
#[derive(Debug, Clone)]
pub struct LexiconProvider {
    id: String,
    positive: HashSet<String>,
    negative: HashSet<String>,
}

fn word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

impl LexiconProvider {
    pub fn builtin() -> Self {
        Self::from_lists(
            "lexicon",
            include_str!("../data/lexicon/positive.txt"),
            include_str!("../data/lexicon/negative.txt"),
        )
    }

    /// Word lists are one word per line; `#` starts a comment line.
    pub fn from_lists(id: &str, positive: &str, negative: &str) -> Self {
        LexiconProvider {
            id: id.to_string(),
            positive: word_list(positive),
            negative: word_list(negative),
        }
    }

    pub fn score(&self, text: &str) -> f64 {
        let mut diff = 0i64;
        for tok in tokenize(&TokenizerConfig::default(), text) {
            if self.negative.contains(&tok) {
                diff += 1;
            } else if self.positive.contains(&tok) {
                diff -= 1;
            }
        }
        1.0 / (1.0 + (-(diff as f64)).exp())
    }
}

impl SentimentProvider for LexiconProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn score_batch(&self, texts: &[String]) -> Result<Vec<Option<f64>>> {
        Ok(texts.iter().map(|t| Some(self.score(t))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentEndpoint {
    /// Requests go to `{base_url}/sentiment`.
    pub base_url: String,
    pub provider_id: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

/// Client for a sentiment service:
/// `POST {"texts": [...]}` → `{"scores": [{"negative": p, "positive": q}, ...]}`.
/// A `null` entry, or one without usable probabilities, marks that text skipped.
pub struct HttpSentimentProvider {
    config: SentimentEndpoint,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpSentimentProvider {
    pub fn new(config: SentimentEndpoint) -> Self {
        HttpSentimentProvider {
            agent: agent(config.timeout_ms),
            config,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

/// Negative probability from one response entry, renormalized over the two
/// classes when both are present.
pub fn parse_sentiment_entry(entry: &Value) -> Option<f64> {
    let neg = entry.get("negative")?.as_f64()?;
    let p = match entry.get("positive").and_then(Value::as_f64) {
        Some(pos) if pos + neg > 0.0 => neg / (pos + neg),
        Some(_) => return None,
        None => neg,
    };
    (p.is_finite() && (0.0..=1.0).contains(&p)).then_some(p)
}

impl SentimentProvider for HttpSentimentProvider {
    fn provider_id(&self) -> &str {
        &self.config.provider_id
    }

    fn score_batch(&self, texts: &[String]) -> Result<Vec<Option<f64>>> {
        let url = format!("{}/sentiment", self.config.base_url.trim_end_matches('/'));
        let body = json!({ "texts": texts });
        let resp = with_retries(self.retry, || post_json(&self.agent, &url, &body))?;
        let scores = resp
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("sentiment response has no `scores` array".into()))?;
        Ok(scores.iter().map(parse_sentiment_entry).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentDetail {
    pub given_name: String,
    pub ending_index: usize,
    pub text: String,
    pub negative_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameSentiment {
    pub given_name: String,
    pub avg_negative: f64,
    pub n_endings: usize,
    pub n_skipped: usize,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentResult {
    pub provider_id: String,
    /// Descending by average, ties by name.
    pub ranking: Vec<NameSentiment>,
    pub population_mean: f64,
    pub population_std: f64,
    /// Spread of the ten least negative averages.
    pub least_negative_std: f64,
    /// Names none of whose endings could be scored.
    pub unscored_names: Vec<String>,
    pub details: Vec<SentimentDetail>,
}

pub fn aggregate_sentiment(provider_id: &str, details: &[SentimentDetail]) -> SentimentResult {
    let mut by_name: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for d in details {
        let e = by_name.entry(&d.given_name).or_default();
        match d.negative_probability {
            Some(p) => e.0.push(p),
            None => e.1 += 1,
        }
    }
    let mut unscored = Vec::new();
    let mut ranking = Vec::new();
    for (name, (vals, skipped)) in by_name {
        if vals.is_empty() {
            unscored.push(name.to_string());
            continue;
        }
        ranking.push(NameSentiment {
            given_name: name.to_string(),
            avg_negative: stats::mean(&vals),
            n_endings: vals.len(),
            n_skipped: skipped,
            provider_id: provider_id.to_string(),
        });
    }
    ranking.sort_by(|a, b| {
        b.avg_negative
            .total_cmp(&a.avg_negative)
            .then_with(|| a.given_name.cmp(&b.given_name))
    });
    let avgs: Vec<f64> = ranking.iter().map(|r| r.avg_negative).collect();
    let tail = &avgs[avgs.len().saturating_sub(10)..];
    SentimentResult {
        provider_id: provider_id.to_string(),
        population_mean: stats::mean(&avgs),
        population_std: stats::std_dev(&avgs),
        least_negative_std: stats::std_dev(tail),
        unscored_names: unscored,
        ranking,
        details: details.to_vec(),
    }
}

/// Scores prompt plus ending, verbatim, for every ending of every corpus.
pub fn rank_names_by_negative(
    corpora: &BTreeMap<String, EndingCorpus>,
    provider: &dyn SentimentProvider,
    batch_size: usize,
    exec: Exec,
) -> Result<SentimentResult> {
    if corpora.is_empty() || corpora.values().any(|c| c.endings.is_empty()) {
        return Err(Error::InvalidRequest("every corpus needs at least one ending".into()));
    }
    let mut keys = Vec::new();
    let mut texts = Vec::new();
    for c in corpora.values() {
        let prompt = c.prompt();
        for (i, e) in c.endings.iter().enumerate() {
            keys.push((c.given_name.clone(), i));
            texts.push(format!("{prompt}{e}"));
        }
    }
    let scores = score_texts(provider, &texts, batch_size, exec)?;
    let details: Vec<SentimentDetail> = keys
        .into_iter()
        .zip(texts)
        .zip(scores)
        .map(|(((given_name, ending_index), text), s)| SentimentDetail {
            given_name,
            ending_index,
            text,
            negative_probability: s.map(|s| s.negative_probability),
        })
        .collect();
    let result = aggregate_sentiment(provider.provider_id(), &details);
    for n in &result.unscored_names {
        log::warn!("no ending of {n} could be scored; left out of the ranking");
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recovery::{default_sampling, TEMPLATE};

    #[test]
    fn lexicon_examples() {
        let lex = LexiconProvider::builtin();
        assert!(lex.score("terrible awful corrupt") > 0.8);
        assert_eq!(lex.score(""), 0.5);
        assert_eq!(lex.score("a chair and a table"), 0.5);
        assert!(lex.score("a kind and honest leader") < 0.5);
        assert_eq!(lex.score("awful but kind"), 0.5);
        assert_eq!(
            lex.score("he was a corrupt but brilliant and corrupt man"),
            lex.score("man corrupt brilliant corrupt was he a but and")
        );
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((lex.score("Terrible, AWFUL, corrupt!") - expected).abs() < 1e-12);
    }

    #[test]
    fn builtin_lists_are_disjoint() {
        let lex = LexiconProvider::builtin();
        assert!(lex.positive.len() > 100 && lex.negative.len() > 100);
        assert!(lex.positive.is_disjoint(&lex.negative));
    }

    #[test]
    fn http_entries() {
        assert_eq!(parse_sentiment_entry(&json!({"negative": 0.2, "positive": 0.6})), Some(0.25));
        assert_eq!(parse_sentiment_entry(&json!({"negative": 0.3})), Some(0.3));
        assert_eq!(parse_sentiment_entry(&json!(null)), None);
        assert_eq!(parse_sentiment_entry(&json!({"negative": 0.0, "positive": 0.0})), None);
        assert_eq!(parse_sentiment_entry(&json!({"negative": 1.5})), None);
    }

    struct Flaky;
    impl SentimentProvider for Flaky {
        fn provider_id(&self) -> &str {
            "flaky"
        }
        fn score_batch(&self, texts: &[String]) -> Result<Vec<Option<f64>>> {
            Ok(texts.iter().map(|t| (!t.contains("skip")).then_some(0.25)).collect())
        }
    }

    fn corpus(name: &str, endings: &[&str]) -> EndingCorpus {
        EndingCorpus {
            given_name: name.into(),
            model_id: "m".into(),
            sampling: default_sampling(),
            seed: 0,
            template: TEMPLATE.into(),
            endings: endings.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn skipped_texts_are_not_zero() {
        let corpora: BTreeMap<String, EndingCorpus> = [
            ("Ann".to_string(), corpus("Ann", &[" ok", " skip"])),
            ("Bea".to_string(), corpus("Bea", &[" skip"])),
        ]
        .into();
        let r = rank_names_by_negative(&corpora, &Flaky, 1, Exec::Parallel).unwrap();
        assert_eq!(r.ranking.len(), 1);
        assert_eq!(r.ranking[0].avg_negative, 0.25);
        assert_eq!(r.ranking[0].n_skipped, 1);
        assert_eq!(r.unscored_names, ["Bea"]);
        assert_eq!(r.details[0].text, "Ann is a ok");
    }

    #[test]
    fn ties_rank_by_name() {
        let corpora: BTreeMap<String, EndingCorpus> = ["Cy", "Al", "Bo"]
            .iter()
            .map(|n| (n.to_string(), corpus(n, &[" a good person", " a bad person"])))
            .collect();
        let r = rank_names_by_negative(&corpora, &LexiconProvider::builtin(), 3, Exec::Sequential).unwrap();
        let names: Vec<&str> = r.ranking.iter().map(|n| n.given_name.as_str()).collect();
        assert_eq!(names, ["Al", "Bo", "Cy"]);
        assert_eq!(r.population_std, 0.0);
        assert!(score_texts(&LexiconProvider::builtin(), &[], 0, Exec::Sequential).is_err());
    }
}
