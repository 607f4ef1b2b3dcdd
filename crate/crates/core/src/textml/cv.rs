//! Stratified k-fold scoring of how separable two document sets are.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::macro_f1;
use super::svm::{predict, train_linear_svm, SvmConfig};
use super::tfidf::{Bag, BagTfidf, TokenIndex};
use super::tokenize::TokenizerConfig;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvPlan {
    pub folds: usize,
    pub seed: u64,
    /// Always true; folds preserve the class balance.
    pub stratified: bool,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            folds: 5,
            seed: 0,
            stratified: true,
        }
    }
}

/// Fold index of every document of one class.
fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut fold_of = vec![0; n];
    for (pos, doc) in order.into_iter().enumerate() {
        fold_of[doc] = pos % folds;
    }
    fold_of
}

/// Mean over folds of the macro F1 of a linear SVM separating `corpus_a`
/// from `corpus_b`. TF-IDF is refit on each training split.
pub fn cv_pair_score<S: AsRef<str>>(
    corpus_a: &[S],
    corpus_b: &[S],
    tokenizer: &TokenizerConfig,
    plan: &CvPlan,
    svm: &SvmConfig,
) -> Result<f64> {
    let (_, bags) = TokenIndex::build(tokenizer, &[corpus_a, corpus_b]);
    cv_pair_score_bags(&bags[0], &bags[1], plan, svm)
}

/// [`cv_pair_score`] over pre-tokenized documents. The two corpora are put in
/// a canonical order first, so the score does not depend on argument order.
pub fn cv_pair_score_bags(
    corpus_a: &[Bag],
    corpus_b: &[Bag],
    plan: &CvPlan,
    svm: &SvmConfig,
) -> Result<f64> {
    if plan.folds < 2 {
        return Err(Error::InvalidRequest("cross-validation needs at least 2 folds".into()));
    }
    if corpus_a.len() < plan.folds || corpus_b.len() < plan.folds {
        return Err(Error::TooSmall(format!(
            "{} folds need at least that many documents per side (got {} and {})",
            plan.folds,
            corpus_a.len(),
            corpus_b.len()
        )));
    }
    let (pos, neg) = if corpus_b < corpus_a {
        (corpus_b, corpus_a)
    } else {
        (corpus_a, corpus_b)
    };
    let pos_folds = assign_folds(pos.len(), plan.folds, seed::derive(plan.seed, 0));
    let neg_folds = assign_folds(neg.len(), plan.folds, seed::derive(plan.seed, 1));

    let docs: Vec<(&Bag, i8, usize)> = pos
        .iter()
        .zip(&pos_folds)
        .map(|(b, f)| (b, 1, *f))
        .chain(neg.iter().zip(&neg_folds).map(|(b, f)| (b, -1, *f)))
        .collect();

    let mut total = 0.0;
    for fold in 0..plan.folds {
        let train: Vec<&(&Bag, i8, usize)> = docs.iter().filter(|d| d.2 != fold).collect();
        let test: Vec<&(&Bag, i8, usize)> = docs.iter().filter(|d| d.2 == fold).collect();
        let tfidf = BagTfidf::fit(train.iter().map(|d| d.0));
        let x: Vec<_> = train.iter().map(|d| tfidf.transform(d.0)).collect();
        let y: Vec<i8> = train.iter().map(|d| d.1).collect();
        let cfg = SvmConfig {
            seed: seed::derive(svm.seed, fold as u64),
            ..*svm
        };
        let model = train_linear_svm(&x, &y, &cfg)?;
        let gold: Vec<i8> = test.iter().map(|d| d.1).collect();
        let pred: Vec<i8> = test
            .iter()
            .map(|d| predict(&model, &tfidf.transform(d.0)))
            .collect::<Result<_>>()?;
        total += macro_f1(&pred, &gold, &1, &-1);
    }
    Ok(total / plan.folds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> CvPlan {
        CvPlan { folds: 5, seed: 17, stratified: true }
    }

    #[test]
    fn folds_are_balanced() {
        let f = assign_folds(23, 5, 1);
        for k in 0..5 {
            let n = f.iter().filter(|x| **x == k).count();
            assert!(n == 4 || n == 5);
        }
    }

    #[test]
    fn separable_corpora_score_one() {
        let a = vec!["alpha alpha"; 20];
        let b = vec!["beta beta"; 20];
        let s = cv_pair_score(&a, &b, &TokenizerConfig::default(), &plan(), &SvmConfig::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a: Vec<String> = (0..12).map(|i| format!("red w{} w{}", i % 5, i % 3)).collect();
        let b: Vec<String> = (0..12).map(|i| format!("blue w{} w{}", i % 4, i % 7)).collect();
        let cfg = TokenizerConfig::default();
        let ab = cv_pair_score(&a, &b, &cfg, &plan(), &SvmConfig::default()).unwrap();
        let ba = cv_pair_score(&b, &a, &cfg, &plan(), &SvmConfig::default()).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn too_small() {
        let a = vec!["x y"; 3];
        let err = cv_pair_score(&a, &a, &TokenizerConfig::default(), &plan(), &SvmConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::TooSmall(_)));
    }
}
