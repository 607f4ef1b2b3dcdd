//! Given-name recovery: how well can a classifier tell which name prompted a
//! set of "is a" endings, once the names themselves are scrubbed out?

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, CompletionBackend, SamplingSpec};
use crate::namebank::{same_gender_pairs, Gender, NameBank, NameRecord};
use crate::par::Exec;
use crate::seed;
use crate::stats;
use crate::textml::{cv_pair_score_bags, CvPlan, SvmConfig, TokenIndex, TokenizerConfig};

pub const TEMPLATE: &str = "[NAME] is a";
pub const DEFAULT_ENDINGS: usize = 50;
pub const PLACEHOLDER: &str = "«NAME»";

pub fn default_sampling() -> SamplingSpec {
    SamplingSpec::nucleus(0.9, 150, 0)
}

pub fn expand(given_name: &str) -> String {
    TEMPLATE.replace("[NAME]", given_name)
}

/// Master seed of one name's corpus, derived from the run seed and the name
/// so that adding or removing names leaves every other corpus unchanged.
pub fn corpus_seed(run_seed: u64, given_name: &str) -> u64 {
    seed::derive_str(run_seed, given_name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndingCorpus {
    pub given_name: String,
    pub model_id: String,
    /// The run-level spec; its seed is the run seed.
    pub sampling: SamplingSpec,
    /// Seed the endings were drawn under (see [`corpus_seed`]).
    pub seed: u64,
    pub template: String,
    pub endings: Vec<String>,
}

impl EndingCorpus {
    pub fn prompt(&self) -> String {
        self.template.replace("[NAME]", &self.given_name)
    }
}

/// Samples `count` endings for one name. `sampling.seed` is the run seed.
pub fn build_corpus(
    backend: &(impl CompletionBackend + ?Sized),
    given_name: &str,
    sampling: &SamplingSpec,
    count: usize,
    exec: Exec,
) -> Result<EndingCorpus> {
    let seed = corpus_seed(sampling.seed, given_name);
    let endings = lm::sample_endings(backend, &expand(given_name), &sampling.with_seed(seed), count, exec)?;
    Ok(EndingCorpus {
        given_name: given_name.to_string(),
        model_id: backend.model_id().to_string(),
        sampling: *sampling,
        seed,
        template: TEMPLATE.to_string(),
        endings,
    })
}

/// Corpora for many names; every (name, ending) request is its own job.
pub fn build_corpora(
    backend: &(impl CompletionBackend + ?Sized),
    names: &[&str],
    sampling: &SamplingSpec,
    count: usize,
    exec: Exec,
) -> Result<BTreeMap<String, EndingCorpus>> {
    sampling.validate()?;
    if !sampling.is_sampled() {
        return Err(Error::InvalidRequest("endings require nucleus or top-k sampling".into()));
    }
    if count == 0 {
        return Err(Error::InvalidRequest("count must be at least 1".into()));
    }
    let jobs: Vec<(&str, usize)> = names
        .iter()
        .flat_map(|n| (0..count).map(move |i| (*n, i)))
        .collect();
    let texts = exec.map(&jobs, |(name, i)| {
        let spec = sampling.with_seed(corpus_seed(sampling.seed, name));
        lm::sample_ending(backend, &expand(name), &spec, *i)
    });
    let mut texts = texts.into_iter();
    let mut out = BTreeMap::new();
    for name in names {
        let endings = texts.by_ref().take(count).collect::<Result<Vec<_>>>()?;
        out.insert(
            name.to_string(),
            EndingCorpus {
                given_name: name.to_string(),
                model_id: backend.model_id().to_string(),
                sampling: *sampling,
                seed: corpus_seed(sampling.seed, name),
                template: TEMPLATE.to_string(),
                endings,
            },
        );
    }
    Ok(out)
}

/// Replaces whole-word, case-insensitive occurrences of a fixed word set.
#[derive(Debug, Clone)]
pub struct Scrubber {
    pattern: Option<Regex>,
}

impl Scrubber {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<&str> = words.into_iter().filter(|w| !w.trim().is_empty()).collect();
        // Longest first so "Mary Ann" wins over "Mary".
        words.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        words.dedup();
        if words.is_empty() {
            return Scrubber { pattern: None };
        }
        let alts: Vec<String> = words.iter().map(|w| regex::escape(w.trim())).collect();
        let re = Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped alternation");
        Scrubber { pattern: Some(re) }
    }

    pub fn apply(&self, text: &str) -> String {
        match &self.pattern {
            Some(re) => re.replace_all(text, PLACEHOLDER).into_owned(),
            None => text.to_string(),
        }
    }

    pub fn occurrences(&self, text: &str) -> usize {
        self.pattern.as_ref().map_or(0, |re| re.find_iter(text).count())
    }
}

pub fn scrub_names(corpus: &EndingCorpus, names: &BTreeSet<String>) -> EndingCorpus {
    let scrubber = Scrubber::new(names.iter().map(String::as_str));
    EndingCorpus {
        endings: corpus.endings.iter().map(|e| scrubber.apply(e)).collect(),
        ..corpus.clone()
    }
}

/// Tokenizer used for recovery features: the placeholder carries no weight.
pub fn recovery_tokenizer() -> TokenizerConfig {
    TokenizerConfig::default().with_stop_words([PLACEHOLDER.to_lowercase()])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubOptions {
    /// Also scrub media and history surnames of every bank record.
    #[serde(default)]
    pub surnames: bool,
}

/// Words removed before featurization: all bank given names, plus surnames
/// when asked.
pub fn scrub_set(bank: &NameBank, options: ScrubOptions) -> BTreeSet<String> {
    let mut set: BTreeSet<String> = bank.given_names().map(str::to_string).collect();
    if options.surnames {
        for r in &bank.records {
            set.extend(r.media_last_name.iter().cloned());
            set.extend(r.history_last_name.iter().cloned());
        }
    }
    set
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub name_a: String,
    pub name_b: String,
    pub gender: Gender,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub given_name: String,
    pub gender: Gender,
    pub mean_pairwise_f1: f64,
    pub per_pair: BTreeMap<String, f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    /// Descending by mean F1, ties by name.
    pub scores: Vec<RecoveryScore>,
    pub pairs: Vec<PairScore>,
    pub population_mean: f64,
    pub population_std: f64,
}

/// Per-name means from pair scores.
pub fn aggregate_pairs(pairs: &[PairScore]) -> RecoveryResult {
    let mut by_name: BTreeMap<&str, (Gender, BTreeMap<String, f64>)> = BTreeMap::new();
    for p in pairs {
        by_name
            .entry(&p.name_a)
            .or_insert_with(|| (p.gender, BTreeMap::new()))
            .1
            .insert(p.name_b.clone(), p.f1);
        by_name
            .entry(&p.name_b)
            .or_insert_with(|| (p.gender, BTreeMap::new()))
            .1
            .insert(p.name_a.clone(), p.f1);
    }
    let mut scores: Vec<RecoveryScore> = by_name
        .into_iter()
        .map(|(name, (gender, per_pair))| {
            let vals: Vec<f64> = per_pair.values().copied().collect();
            RecoveryScore {
                given_name: name.to_string(),
                gender,
                mean_pairwise_f1: stats::mean(&vals),
                n_pairs: vals.len(),
                per_pair,
            }
        })
        .collect();
    scores.sort_by(|a, b| {
        b.mean_pairwise_f1
            .total_cmp(&a.mean_pairwise_f1)
            .then_with(|| a.given_name.cmp(&b.given_name))
    });
    let means: Vec<f64> = scores.iter().map(|s| s.mean_pairwise_f1).collect();
    RecoveryResult {
        population_mean: stats::mean(&means),
        population_std: stats::std_dev(&means),
        scores,
        pairs: pairs.to_vec(),
    }
}

fn check_provenance(corpora: &BTreeMap<String, EndingCorpus>) -> Result<()> {
    let mut iter = corpora.values();
    let Some(first) = iter.next() else {
        return Err(Error::Config("no corpora to score".into()));
    };
    for c in iter {
        if c.model_id != first.model_id || c.sampling != first.sampling || c.template != first.template {
            return Err(Error::Config(format!(
                "corpora for {} and {} come from different models or sampling settings",
                first.given_name, c.given_name
            )));
        }
    }
    Ok(())
}

/// Scores every same-gender pair among the names that have a corpus.
///
/// All corpora are tokenized once up front; the pair jobs then share the
/// resulting bags and run under `exec`.
pub fn recovery_scores(
    corpora: &BTreeMap<String, EndingCorpus>,
    bank: &NameBank,
    plan: &CvPlan,
    svm: &SvmConfig,
    scrub: ScrubOptions,
    exec: Exec,
) -> Result<RecoveryResult> {
    check_provenance(corpora)?;
    let mut records: Vec<NameRecord> = Vec::with_capacity(corpora.len());
    for name in corpora.keys() {
        let r = bank
            .get(name)
            .ok_or_else(|| Error::Config(format!("{name} has a corpus but is not in the name bank")))?;
        records.push(r.clone());
    }
    for g in [Gender::F, Gender::M] {
        let n = records.iter().filter(|r| r.gender == g).count();
        if n == 1 {
            return Err(Error::TooSmall(format!("only one {g:?} name; pairs need at least two")));
        }
    }
    let pairs = same_gender_pairs(&records);
    if pairs.is_empty() {
        return Err(Error::TooSmall("no same-gender pairs to score".into()));
    }

    let scrubber = Scrubber::new(scrub_set(bank, scrub).iter().map(String::as_str));
    let names: Vec<&String> = corpora.keys().collect();
    let scrubbed: Vec<Vec<String>> = corpora
        .values()
        .map(|c| c.endings.iter().map(|e| scrubber.apply(e)).collect())
        .collect();
    let slices: Vec<&[String]> = scrubbed.iter().map(Vec::as_slice).collect();
    let (_, bags) = TokenIndex::build(&recovery_tokenizer(), &slices);
    let position = |name: &str| names.binary_search_by(|n| n.as_str().cmp(name)).expect("name has a corpus");

    let scored = exec.map(&pairs, |(a, b)| {
        let f1 = cv_pair_score_bags(&bags[position(&a.given_name)], &bags[position(&b.given_name)], plan, svm)?;
        Ok(PairScore {
            name_a: a.given_name.clone(),
            name_b: b.given_name.clone(),
            gender: a.gender,
            f1,
        })
    });
    let pairs = scored.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate_pairs(&pairs))
}

/// Symmetric matrix of pair scores for one gender; the diagonal is empty.
pub fn score_matrix(result: &RecoveryResult, gender: Gender) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let mut names: Vec<String> = result
        .scores
        .iter()
        .filter(|s| s.gender == gender)
        .map(|s| s.given_name.clone())
        .collect();
    names.sort();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut m = vec![vec![None; names.len()]; names.len()];
    for p in result.pairs.iter().filter(|p| p.gender == gender) {
        let (i, j) = (index[p.name_a.as_str()], index[p.name_b.as_str()]);
        m[i][j] = Some(p.f1);
        m[j][i] = Some(p.f1);
    }
    (names, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::mock::{MockModel, MockRule};
    use crate::namebank::ProbeFlag;

    #[test]
    fn scrub_examples() {
        let set: BTreeSet<String> = ["Donald".to_string()].into();
        let c = EndingCorpus {
            given_name: "Donald".into(),
            model_id: "m".into(),
            sampling: default_sampling(),
            seed: 0,
            template: TEMPLATE.into(),
            endings: vec!["Donald Trump said Donald…".into(), "no names here".into(), "McDonald's donald".into()],
        };
        let s = scrub_names(&c, &set);
        assert_eq!(s.endings[0], "«NAME» Trump said «NAME»…");
        assert_eq!(s.endings[1], "no names here");
        assert_eq!(s.endings[2], "McDonald's «NAME»");
        assert_eq!(c.endings[0], "Donald Trump said Donald…");
    }

    #[test]
    fn placeholder_is_not_a_feature() {
        let toks = crate::textml::tokenize(&recovery_tokenizer(), "«NAME» is a «NAME» leader");
        assert_eq!(toks, ["is", "leader"]);
    }

    #[test]
    fn overlapping_names_scrub_longest_first() {
        let s = Scrubber::new(["Mary", "Mary Ann", "Ann"]);
        assert_eq!(s.apply("Mary Ann and Ann met mary"), "«NAME» and «NAME» met «NAME»");
        assert_eq!(Scrubber::new(std::iter::empty()).apply("Mary"), "Mary");
    }

    fn bank(names: &[(&str, Gender)]) -> NameBank {
        NameBank::from_records(
            names
                .iter()
                .map(|(n, g)| NameRecord::new(*n, *g).with_flags(&[ProbeFlag::RecoverySentiment]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn corpus_seeds_are_per_name() {
        let mock = MockModel::new("m", vec![MockRule::uniform("", &["a1", "b2", "c3", "d4"], "")]).unwrap();
        let spec = SamplingSpec::nucleus(1.0, 6, 9);
        let all = build_corpora(&mock, &["Ann", "Bob"], &spec, 4, Exec::Sequential).unwrap();
        let one = build_corpus(&mock, "Bob", &spec, 4, Exec::Parallel).unwrap();
        assert_eq!(all["Bob"], one);
        assert_ne!(all["Ann"].endings, all["Bob"].endings);
        assert!(build_corpus(&mock, "Bob", &spec, 0, Exec::Sequential).is_err());
        assert!(build_corpus(&mock, "Bob", &SamplingSpec::greedy(5), 3, Exec::Sequential).is_err());
    }

    #[test]
    fn pair_scores_and_matrix() {
        let rules = vec![
            MockRule::uniform("Ann is a", &["apple", "avocado"], " and apricot"),
            MockRule::uniform("Bea is a", &["banana", "berry"], " and blueberry"),
            MockRule::uniform("Cat is a", &["cherry", "coconut"], " and currant"),
            MockRule::uniform("Dan is a", &["date", "durian"], " and damson"),
        ];
        let mock = MockModel::new("m", rules).unwrap();
        let b = bank(&[("Ann", Gender::F), ("Bea", Gender::F), ("Cat", Gender::F), ("Dan", Gender::M), ("Eli", Gender::M)]);
        let spec = SamplingSpec::nucleus(0.9, 12, 3);
        let corpora = build_corpora(&mock, &["Ann", "Bea", "Cat"], &spec, 10, Exec::Parallel).unwrap();
        let r = recovery_scores(&corpora, &b, &CvPlan::default(), &SvmConfig::default(), ScrubOptions::default(), Exec::Parallel)
            .unwrap();
        assert_eq!(r.pairs.len(), 3);
        for s in &r.scores {
            assert_eq!(s.n_pairs, 2);
            assert!((s.mean_pairwise_f1 - 1.0).abs() < 1e-12);
        }
        let (names, m) = score_matrix(&r, Gender::F);
        assert_eq!(names, ["Ann", "Bea", "Cat"]);
        for i in 0..3 {
            assert!(m[i][i].is_none());
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        let seq = recovery_scores(&corpora, &b, &CvPlan::default(), &SvmConfig::default(), ScrubOptions::default(), Exec::Sequential)
            .unwrap();
        assert_eq!(seq, r);

        // A lone male name cannot be paired.
        let mut with_dan = corpora.clone();
        with_dan.extend(build_corpora(&mock, &["Dan"], &spec, 10, Exec::Sequential).unwrap());
        assert!(matches!(
            recovery_scores(&with_dan, &b, &CvPlan::default(), &SvmConfig::default(), ScrubOptions::default(), Exec::Sequential),
            Err(Error::TooSmall(_))
        ));
    }

    #[test]
    fn mixed_provenance_is_rejected() {
        let mock = MockModel::new("m", vec![MockRule::uniform("", &["x1", "y2"], "")]).unwrap();
        let b = bank(&[("Ann", Gender::F), ("Bea", Gender::F)]);
        let mut corpora = build_corpora(&mock, &["Ann"], &SamplingSpec::nucleus(0.9, 5, 1), 5, Exec::Sequential).unwrap();
        corpora.extend(build_corpora(&mock, &["Bea"], &SamplingSpec::nucleus(0.8, 5, 1), 5, Exec::Sequential).unwrap());
        assert!(matches!(
            recovery_scores(&corpora, &b, &CvPlan::default(), &SvmConfig::default(), ScrubOptions::default(), Exec::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn aggregate_mean_matches_pairs() {
        let pairs = vec![
            PairScore { name_a: "A".into(), name_b: "B".into(), gender: Gender::F, f1: 0.5 },
            PairScore { name_a: "A".into(), name_b: "C".into(), gender: Gender::F, f1: 0.9 },
            PairScore { name_a: "B".into(), name_b: "C".into(), gender: Gender::F, f1: 0.7 },
        ];
        let r = aggregate_pairs(&pairs);
        let names: Vec<&str> = r.scores.iter().map(|s| s.given_name.as_str()).collect();
        assert_eq!(names, ["C", "A", "B"]);
        assert!((r.scores[0].mean_pairwise_f1 - 0.8).abs() < 1e-12);
        assert!((r.population_mean - 0.7).abs() < 1e-12);
    }
}
