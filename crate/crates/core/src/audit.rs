//! End-to-end runs driven by a JSON [`AuditConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grounding::{self, EntitySet, PromptKind};
use crate::lm::cache::CachedBackend;
use crate::lm::http::{EndpointConfig, HttpCompletionBackend};
use crate::lm::mock::{MockModel, MockRule, EOS};
use crate::lm::{CompletionBackend, SamplingSpec};
use crate::namebank::{filter_bank, load_namebank, NameBank, NameRecord, ProbeFlag};
use crate::par::{with_pool, Exec};
use crate::recovery::{self, EndingCorpus, ScrubOptions};
use crate::report::{self, RunManifest, RunResults};
use crate::seed;
use crate::sentiment::{self, HttpSentimentProvider, LexiconProvider, SentimentEndpoint, SentimentProvider};
use crate::swap::http::{CachedQa, HttpQaBackend, QaEndpoint};
use crate::swap::mock::NameAttachedQa;
use crate::swap::{self, load_templates, QaBackend, SwapTemplate};
use crate::textml::{CvPlan, SvmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    Grounding,
    Recovery,
    Sentiment,
    Swap,
}

impl Probe {
    pub const ALL: [Probe; 4] = [Probe::Grounding, Probe::Recovery, Probe::Sentiment, Probe::Swap];

    pub fn as_str(self) -> &'static str {
        match self {
            Probe::Grounding => "grounding",
            Probe::Recovery => "recovery",
            Probe::Sentiment => "sentiment",
            Probe::Swap => "swap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SentimentConfig {
    Lexicon,
    Http(SentimentEndpoint),
}

fn default_probes() -> Vec<Probe> {
    Probe::ALL.to_vec()
}
fn default_sampling() -> SamplingSpec {
    recovery::default_sampling()
}
fn default_endings() -> usize {
    recovery::DEFAULT_ENDINGS
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}
fn default_sentiment() -> SentimentConfig {
    SentimentConfig::Lexicon
}
fn default_batch() -> usize {
    32
}
fn default_prompts() -> Vec<PromptKind> {
    PromptKind::ALL.to_vec()
}
fn default_entity_sets() -> Vec<EntitySet> {
    vec![EntitySet::News, EntitySet::History]
}

/// Run configuration. Every field except `model` and `qa` has a default;
/// relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default)]
    pub model: Option<EndpointConfig>,
    /// Name bank TSV; the bundled bank when absent.
    #[serde(default)]
    pub namebank: Option<PathBuf>,
    #[serde(default = "default_probes")]
    pub probes: Vec<Probe>,
    /// Ending sampler. Its seed is the run seed for corpora.
    #[serde(default = "default_sampling")]
    pub sampling: SamplingSpec,
    #[serde(default = "default_endings")]
    pub endings: usize,
    #[serde(default)]
    pub cv: CvPlan,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub scrub_surnames: bool,
    /// Seed for sampling swap pairs under a budget.
    #[serde(default)]
    pub swap_seed: u64,
    #[serde(default)]
    pub pair_budget: Option<usize>,
    #[serde(default)]
    pub qa: Option<QaEndpoint>,
    /// Template file; the bundled templates when absent.
    #[serde(default)]
    pub swap_templates: Option<PathBuf>,
    #[serde(default = "default_sentiment")]
    pub sentiment: SentimentConfig,
    #[serde(default = "default_batch")]
    pub sentiment_batch: usize,
    #[serde(default = "default_prompts")]
    pub grounding_prompts: Vec<PromptKind>,
    #[serde(default = "default_entity_sets")]
    pub entity_sets: Vec<EntitySet>,
    /// Names for the next-word table; defaults to those with a recorded
    /// media frequency.
    #[serde(default)]
    pub next_word_names: Option<Vec<String>>,
    /// Cache directory; `<output_dir>/cache` when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub sequential: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl AuditConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.namebank.as_mut().map(fix);
        cfg.swap_templates.as_mut().map(fix);
        cfg.cache_dir.as_mut().map(fix);
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// Fails on anything that would stop a probe from starting. Makes no
    /// network calls.
    pub fn validate(&self, probes: &[Probe], mock: bool) -> Result<()> {
        let needs_lm = probes.iter().any(|p| *p != Probe::Swap);
        if needs_lm && !mock && self.model.is_none() {
            return Err(Error::Config("a model endpoint is required for the selected probes".into()));
        }
        if probes.contains(&Probe::Swap) && !mock && self.qa.is_none() {
            return Err(Error::Config("the swap probe needs a QA endpoint (`qa`)".into()));
        }
        for p in [&self.namebank, &self.swap_templates].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if probes.iter().any(|p| matches!(p, Probe::Recovery | Probe::Sentiment)) {
            self.sampling
                .validate()
                .map_err(|e| Error::Config(format!("sampling: {e}")))?;
            if !self.sampling.is_sampled() {
                return Err(Error::Config("endings need nucleus or top-k sampling".into()));
            }
            if self.endings == 0 {
                return Err(Error::Config("endings must be at least 1".into()));
            }
        }
        if probes.contains(&Probe::Recovery) {
            if self.cv.folds < 2 || self.endings < self.cv.folds {
                return Err(Error::Config(format!(
                    "{} endings cannot fill {} folds",
                    self.endings, self.cv.folds
                )));
            }
            if self.svm.lambda.is_nan() || self.svm.lambda <= 0.0 || self.svm.epochs == 0 {
                return Err(Error::Config("svm needs lambda > 0 and epochs >= 1".into()));
            }
        }
        if probes.contains(&Probe::Grounding) && (self.grounding_prompts.is_empty() || self.entity_sets.is_empty()) {
            return Err(Error::Config("grounding needs at least one prompt and one entity set".into()));
        }
        if self.sentiment_batch == 0 {
            return Err(Error::Config("sentiment_batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bank(&self) -> Result<NameBank> {
        match &self.namebank {
            Some(p) => load_namebank(p),
            None => Ok(NameBank::builtin()),
        }
    }

    pub fn templates(&self) -> Result<Vec<SwapTemplate>> {
        match &self.swap_templates {
            Some(p) => load_templates(p),
            None => Ok(swap::builtin_templates()),
        }
    }

    /// Content hash of everything that determines a run's results.
    pub fn run_id(&self, probes: &[Probe], mock: bool, bank: &NameBank) -> String {
        let mut cfg = self.clone();
        // Where results land and how fast they are computed do not change them.
        cfg.output_dir = PathBuf::new();
        cfg.cache_dir = None;
        cfg.threads = 0;
        cfg.sequential = false;
        cfg.namebank = None;
        let material = json!({
            "config": cfg,
            "probes": probes,
            "mock": mock,
            "namebank": bank.checksum,
        });
        hex::encode(Sha256::digest(material.to_string().as_bytes()))
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.output_dir.join(&run_id[..16])
    }
}

fn surname_is_plain_word(surname: &str, bank: &NameBank) -> bool {
    !surname.contains(' ') && bank.get(surname).is_none()
}

const FILLER: [&str; 16] = [
    "person", "friend", "teacher", "writer", "student", "member", "family", "leader", "worker", "neighbor",
    "great", "good", "new", "young", "local", "very",
];
const TONE: [&str; 6] = ["kind", "honest", "brilliant", "cruel", "corrupt", "terrible"];
const TOPICS: [&str; 12] = [
    "politics", "music", "sports", "science", "business", "church", "law", "film", "school", "army", "farm", "art",
];

/// Scripted model used by `--mock`: media names have strong surname
/// grounding and topical "is a" endings; every name gets a seeded mix of
/// filler, tone and topic words.
pub fn demo_mock_model(bank: &NameBank) -> MockModel {
    let mut rules = Vec::new();
    for r in &bank.records {
        let name = &r.given_name;
        let h = seed::derive_str(7, name);
        if let Some(last) = &r.media_last_name {
            rules.push(MockRule::new(name, &[(last, 0.55), ("is", 0.3), ("has", 0.15)], " said on Monday"));
            rules.push(MockRule::new(&format!("says that {name}"), &[(last, 0.9), ("is", 0.1)], " said"));
            rules.push(MockRule::new(&format!("friend, {name}"), &[(",", 0.8), (last, 0.2)], " who"));
        }
        if let Some(hist) = &r.history_last_name {
            rules.push(MockRule::new(&format!("biography of {name}"), &[(hist, 0.7), ("is", 0.3)], " was"));
        }

        let mut weights: BTreeMap<String, f64> = BTreeMap::new();
        for (i, w) in FILLER.iter().enumerate() {
            weights.insert(w.to_string(), 1.0 + ((h >> i) & 1) as f64);
        }
        for (i, w) in TONE.iter().enumerate() {
            weights.insert(w.to_string(), ((h >> (16 + 2 * i)) & 3) as f64 * 0.5 + 0.1);
        }
        weights.insert(TOPICS[(h >> 32) as usize % TOPICS.len()].to_string(), 3.0);
        if let Some(last) = r.media_last_name.as_deref().filter(|l| surname_is_plain_word(l, bank)) {
            weights.insert(last.to_string(), 6.0);
            weights.insert("politics".to_string(), 4.0);
        }
        weights.insert(EOS.to_string(), 0.3);
        let total: f64 = weights.values().sum();
        let dist: Vec<(&str, f64)> = weights.iter().map(|(k, v)| (k.as_str(), v / total)).collect();
        rules.push(MockRule::new(&format!("{name} is a"), &dist, ""));
    }
    MockModel::new("mock-lm", rules).expect("demo rules are valid")
}

/// QA mock for `--mock`: attached to the media names among the swap names.
pub fn demo_mock_qa(bank: &NameBank, templates: Vec<SwapTemplate>) -> NameAttachedQa {
    let names: Vec<&str> = bank
        .records
        .iter()
        .filter(|r| r.has(ProbeFlag::Swap) && r.media_frequency.is_some())
        .map(|r| r.given_name.as_str())
        .collect();
    NameAttachedQa::new("mock-qa", names, templates)
}

/// Which probes a subcommand runs.
pub fn probes_for(command: &str, config: &AuditConfig) -> Result<Vec<Probe>> {
    let mut p = match command {
        "all" => config.probes.clone(),
        "grounding" => vec![Probe::Grounding],
        "recovery" => vec![Probe::Recovery],
        "sentiment" => vec![Probe::Sentiment],
        "swap" => vec![Probe::Swap],
        other => return Err(Error::Config(format!("unknown subcommand `{other}`"))),
    };
    p.sort();
    p.dedup();
    if p.is_empty() {
        return Err(Error::Config("no probes selected".into()));
    }
    Ok(p)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub run_id: String,
    /// First probe failure, if any; completed probes are still written.
    pub failure: Option<Error>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn next_word_records(config: &AuditConfig, bank: &NameBank) -> Result<Vec<NameRecord>> {
    match &config.next_word_names {
        Some(names) => names
            .iter()
            .map(|n| {
                bank.get(n)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("next-word name {n} is not in the bank")))
            })
            .collect(),
        None => Ok(bank.records.iter().filter(|r| r.media_frequency.is_some()).cloned().collect()),
    }
}

fn run_probe(
    probe: Probe,
    config: &AuditConfig,
    bank: &NameBank,
    lm: &dyn CompletionBackend,
    qa: Option<&dyn QaBackend>,
    sentiment_provider: &dyn SentimentProvider,
    results: &mut RunResults,
) -> Result<()> {
    let exec = config.exec();
    match probe {
        Probe::Grounding => {
            let mut tables = Vec::new();
            let mut details = Vec::new();
            for &set in &config.entity_sets {
                let run = grounding::run_grounding_probe(lm, bank, set, &config.grounding_prompts, exec)?;
                tables.push(run.table);
                details.extend(run.details);
            }
            results.grounding = Some((tables, details));
            let records = next_word_records(config, bank)?;
            if !records.is_empty() {
                results.next_word = Some(grounding::next_word_table(lm, &records, &config.grounding_prompts, exec)?);
            }
        }
        Probe::Recovery | Probe::Sentiment => {
            if results.corpora.is_none() {
                let names: Vec<NameRecord> = filter_bank(bank, ProbeFlag::RecoverySentiment, None);
                let names: Vec<&str> = names.iter().map(|r| r.given_name.as_str()).collect();
                if names.is_empty() {
                    return Err(Error::TooSmall("no names flagged for recovery/sentiment".into()));
                }
                results.corpora = Some(recovery::build_corpora(lm, &names, &config.sampling, config.endings, exec)?);
            }
            let corpora: &BTreeMap<String, EndingCorpus> = results.corpora.as_ref().expect("built above");
            if probe == Probe::Recovery {
                let scrub = ScrubOptions {
                    surnames: config.scrub_surnames,
                };
                results.recovery = Some(recovery::recovery_scores(corpora, bank, &config.cv, &config.svm, scrub, exec)?);
            } else {
                results.sentiment = Some(sentiment::rank_names_by_negative(
                    corpora,
                    sentiment_provider,
                    config.sentiment_batch,
                    exec,
                )?);
            }
        }
        Probe::Swap => {
            let qa = qa.expect("validated: swap has a QA backend");
            let run = swap::run_swap_probe(qa, &config.templates()?, bank, config.pair_budget, config.swap_seed, exec)?;
            results.swap = Some((run.report, run.records));
        }
    }
    Ok(())
}

/// Runs `probes` and writes the run directory. Configuration problems are
/// returned as errors before any request is made; probe failures are
/// reported in the outcome after the finished probes have been written.
pub fn run(config: &AuditConfig, probes: &[Probe], mock: bool) -> Result<RunOutcome> {
    config.validate(probes, mock)?;
    let bank = config.bank().map_err(|e| Error::Config(e.to_string()))?;
    let templates = if probes.contains(&Probe::Swap) {
        Some(config.templates()?)
    } else {
        None
    };
    let run_id = config.run_id(probes, mock, &bank);
    let run_dir = config.run_dir(&run_id);
    let cache = config.cache_dir();

    let lm_inner: Arc<dyn CompletionBackend> = if mock {
        Arc::new(demo_mock_model(&bank))
    } else {
        Arc::new(HttpCompletionBackend::new(config.model.clone().expect("validated")))
    };
    let lm = CachedBackend::new(lm_inner, cache.join("lm"))?;
    let qa: Option<Box<dyn QaBackend>> = match templates {
        Some(t) if mock => Some(Box::new(CachedQa::new(demo_mock_qa(&bank, t), cache.join("qa"))?)),
        Some(_) => Some(Box::new(CachedQa::new(
            HttpQaBackend::new(config.qa.clone().expect("validated")),
            cache.join("qa"),
        )?)),
        None => None,
    };
    let provider: Box<dyn SentimentProvider> = match (&config.sentiment, mock) {
        (SentimentConfig::Http(ep), false) => Box::new(HttpSentimentProvider::new(ep.clone())),
        _ => Box::new(LexiconProvider::builtin()),
    };

    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        model_id: lm.model_id().to_string(),
        qa_model_id: qa.as_ref().map(|q| q.model_id().to_string()),
        probes: probes.iter().map(|p| p.as_str().to_string()).collect(),
        sampling: config.sampling,
        seeds: [
            ("sampling".to_string(), config.sampling.seed),
            ("cv".to_string(), config.cv.seed),
            ("svm".to_string(), config.svm.seed),
            ("swap".to_string(), config.swap_seed),
        ]
        .into(),
        namebank_checksum: bank.checksum.clone(),
        provider_ids: vec![provider.provider_id().to_string()],
        started_unix: now(),
        finished_unix: None,
    };
    report::write_manifest(&run_dir, &manifest)?;

    let mut results = RunResults::default();
    let mut failure = None;
    with_pool(config.threads, || {
        for &p in probes {
            log::info!("running {} probe", p.as_str());
            if let Err(e) = run_probe(p, config, &bank, &lm, qa.as_deref(), provider.as_ref(), &mut results) {
                log::error!("{} probe failed: {e}", p.as_str());
                failure = Some(e);
                break;
            }
        }
    });
    if !probes.contains(&Probe::Recovery) && !probes.contains(&Probe::Sentiment) {
        results.corpora = None;
    }
    log::info!("cache: {} hits, {} misses", lm.hits(), lm.misses());
    manifest.finished_unix = failure.is_none().then(now);
    report::write_run(&run_dir, &manifest, &results, &bank)?;
    Ok(RunOutcome {
        run_dir,
        run_id,
        failure,
    })
}

/// Replays the consistency check over an existing run directory.
pub fn verify(run_dir: &Path, bank: &NameBank) -> Result<Vec<report::Discrepancy>> {
    report::verify_run(run_dir, bank)
}
