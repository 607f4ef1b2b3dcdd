//! TF-IDF with raw term counts, smooth idf `ln((1 + N) / (1 + df)) + 1` and
//! L2-normalized rows.
//!
//! [`TfidfModel`] is the string-level API. [`TokenIndex`], [`Bag`] and
//! [`BagTfidf`] are the same computation over pre-tokenized documents, used
//! when one corpus takes part in many fits (pairwise cross-validation).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::sparse::SparseVector;
use super::tokenize::{tokenize, TokenizerConfig};
use crate::error::{Error, Result};

pub fn smooth_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// `(column, count)` pairs in column order -> weighted, unit-norm vector.
fn weigh(counts: impl Iterator<Item = (usize, u32)>, idf: &[f64]) -> SparseVector {
    let mut entries: Vec<(usize, f64)> = counts.map(|(c, n)| (c, f64::from(n) * idf[c])).collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    SparseVector::new(entries, idf.len()).expect("columns come from the fitted vocabulary")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Token -> column; columns follow lexicographic token order.
    pub vocabulary: BTreeMap<String, usize>,
    pub document_frequency: Vec<usize>,
    pub idf: Vec<f64>,
    pub n_docs_fitted: usize,
    pub config: TokenizerConfig,
}

pub fn fit_tfidf<S: AsRef<str>>(config: &TokenizerConfig, corpus: &[S]) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::Fit("empty corpus".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let mut toks = tokenize(config, doc.as_ref());
        toks.sort();
        toks.dedup();
        for t in toks {
            *df.entry(t).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::Fit("no document contains a token".into()));
    }
    let n = corpus.len();
    let vocabulary = df.keys().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let document_frequency: Vec<usize> = df.values().copied().collect();
    let idf = document_frequency.iter().map(|&d| smooth_idf(n, d)).collect();
    Ok(TfidfModel {
        vocabulary,
        document_frequency,
        idf,
        n_docs_fitted: n,
        config: config.clone(),
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Out-of-vocabulary tokens are ignored; a document with no known token
    /// maps to the zero vector.
    pub fn transform(&self, doc: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for t in tokenize(&self.config, doc) {
            if let Some(&c) = self.vocabulary.get(&t) {
                *counts.entry(c).or_default() += 1;
            }
        }
        weigh(counts.into_iter(), &self.idf)
    }
}

/// Term counts of one document as `(token id, count)`, sorted by id.
pub type Bag = Vec<(u32, u32)>;

/// Token interner whose ids follow lexicographic token order.
#[derive(Debug, Clone, Default)]
pub struct TokenIndex {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl TokenIndex {
    /// Tokenizes every document of every corpus and returns the index plus
    /// one bag list per corpus.
    pub fn build<S: AsRef<str>>(config: &TokenizerConfig, corpora: &[&[S]]) -> (Self, Vec<Vec<Bag>>) {
        let tokenized: Vec<Vec<Vec<String>>> = corpora
            .iter()
            .map(|c| c.iter().map(|d| tokenize(config, d.as_ref())).collect())
            .collect();
        let mut all: Vec<&str> = tokenized
            .iter()
            .flatten()
            .flatten()
            .map(String::as_str)
            .collect();
        all.sort_unstable();
        all.dedup();
        let tokens: Vec<String> = all.iter().map(|s| s.to_string()).collect();
        let ids: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let bags = tokenized
            .iter()
            .map(|corpus| {
                corpus
                    .iter()
                    .map(|doc| {
                        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
                        for t in doc {
                            *counts.entry(ids[t]).or_default() += 1;
                        }
                        counts.into_iter().collect()
                    })
                    .collect()
            })
            .collect();
        (TokenIndex { ids, tokens }, bags)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }
}

/// TF-IDF fitted on bags. An all-empty training set yields a zero-width
/// model, which maps every document to the empty vector.
#[derive(Debug, Clone)]
pub struct BagTfidf {
    /// Sorted token ids; position = column.
    columns: Vec<u32>,
    idf: Vec<f64>,
}

impl BagTfidf {
    pub fn fit<'a>(bags: impl IntoIterator<Item = &'a Bag>) -> Self {
        let mut df: BTreeMap<u32, usize> = BTreeMap::new();
        let mut n = 0;
        for bag in bags {
            n += 1;
            for (id, _) in bag {
                *df.entry(*id).or_default() += 1;
            }
        }
        let columns = df.keys().copied().collect();
        let idf = df.values().map(|&d| smooth_idf(n, d)).collect();
        BagTfidf { columns, idf }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn transform(&self, bag: &Bag) -> SparseVector {
        let counts = bag
            .iter()
            .filter_map(|(id, n)| self.columns.binary_search(id).ok().map(|c| (c, *n)));
        weigh(counts, &self.idf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_1_5: f64 = 0.405_465_108_108_164_4;

    #[test]
    fn idf_hand_values() {
        let cfg = TokenizerConfig::default();
        let m = fit_tfidf(&cfg, &["apple pie", "apple tart"]).unwrap();
        assert!((m.idf[m.vocabulary["apple"]] - 1.0).abs() < 1e-12);
        assert!((m.idf[m.vocabulary["pie"]] - (1.0 + LN_1_5)).abs() < 1e-12);
        let single = fit_tfidf(&cfg, &["one two two"]).unwrap();
        assert!(single.idf.iter().all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn fit_errors() {
        let cfg = TokenizerConfig::default();
        assert!(fit_tfidf::<&str>(&cfg, &[]).is_err());
        assert!(fit_tfidf(&cfg, &["", "a ."]).is_err());
    }

    #[test]
    fn transform_edge_cases() {
        let cfg = TokenizerConfig::default();
        let m = fit_tfidf(&cfg, &["apple pie", "apple tart"]).unwrap();
        let v = m.transform("pie");
        assert_eq!(v.nnz(), 1);
        assert!((v.entries()[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(m.transform("").nnz(), 0);
        assert_eq!(m.transform("unknown words").nnz(), 0);
        assert_eq!(m.transform("").dim(), 3);
    }

    #[test]
    fn bag_path_matches_string_path() {
        let cfg = TokenizerConfig::default();
        let docs = ["the cat sat", "the dog sat down", "a cat and a dog", "zebra"];
        let model = fit_tfidf(&cfg, &docs).unwrap();
        let (index, bags) = TokenIndex::build(&cfg, &[&docs[..]]);
        let bag_model = BagTfidf::fit(&bags[0]);
        assert_eq!(index.len(), model.dim());
        for (doc, bag) in docs.iter().zip(&bags[0]) {
            assert_eq!(model.transform(doc), bag_model.transform(bag));
        }
        let empty = BagTfidf::fit(std::iter::empty());
        assert_eq!(empty.transform(&vec![(0, 1)]).nnz(), 0);
    }
}
