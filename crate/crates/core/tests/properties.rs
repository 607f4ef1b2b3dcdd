use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use nameprobe::lm::mock::{MockModel, MockRule};
use nameprobe::lm::{sample_endings, SamplingSpec};
use nameprobe::namebank::{parse_namebank, serialize, Gender, NameRecord, ProbeFlag};
use nameprobe::par::Exec;
use nameprobe::recovery::{EndingCorpus, TEMPLATE};
use nameprobe::sentiment::{rank_names_by_negative, SentimentProvider};
use nameprobe::swap::{builtin_templates, expand_swap, resolve_predicted_slot, Resolution};
use nameprobe::textml::{cv_pair_score, fit_tfidf, smooth_idf, train_linear_svm, CvPlan, SparseVector, SvmConfig, TokenizerConfig};

fn record() -> impl Strategy<Value = NameRecord> {
    (
        "[A-Z][a-z]{1,7}",
        prop::bool::ANY,
        prop::option::of("[A-Z][a-z]{2,8}"),
        prop::option::of(1u64..10_000_000),
        prop::option::of(1u32..5000),
        prop::option::of("[A-Z][a-z]{2,8}"),
        prop::collection::btree_set(prop::sample::select(vec![ProbeFlag::Grounding, ProbeFlag::RecoverySentiment, ProbeFlag::Swap]), 0..3),
    )
        .prop_map(|(name, female, media, freq, rank, history, flags)| {
            let mut r = NameRecord::new(name, if female { Gender::F } else { Gender::M });
            r.media_frequency = media.as_ref().and(freq);
            r.media_last_name = media;
            r.census_rank = rank;
            r.history_last_name = history;
            r.probe_flags = flags;
            if r.media_last_name.is_none() && r.history_last_name.is_none() {
                r.probe_flags.remove(&ProbeFlag::Grounding);
            }
            r
        })
}

fn records() -> impl Strategy<Value = Vec<NameRecord>> {
    prop::collection::vec(record(), 1..12).prop_map(|rs| {
        let mut seen = BTreeSet::new();
        rs.into_iter().filter(|r| seen.insert(r.given_name.clone())).collect()
    })
}

fn document() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["alpha", "beta", "gamma", "delta", "eps", "zeta", "x"]), 0..8)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn namebank_round_trips(rs in records()) {
        let bank = parse_namebank(&serialize(&rs), "prop").unwrap();
        prop_assert_eq!(&bank.records, &rs);
        prop_assert_eq!(serialize(&bank.records), serialize(&rs));
    }

    #[test]
    fn tfidf_rows_have_unit_or_zero_norm(corpus in prop::collection::vec(document(), 1..8), probe in document()) {
        let cfg = TokenizerConfig::default();
        match fit_tfidf(&cfg, &corpus) {
            Ok(model) => {
                let v = model.transform(&probe);
                let n = v.norm();
                prop_assert!(v.nnz() == 0 && n == 0.0 || (n - 1.0).abs() < 1e-12);
            }
            // Only a corpus without a single token is unfittable.
            Err(_) => prop_assert!(corpus.iter().all(|d| nameprobe::textml::tokenize(&cfg, d).is_empty())),
        }
    }

    #[test]
    fn idf_is_non_increasing_in_df(n in 1usize..500, a in 0usize..500, b in 0usize..500) {
        let (lo, hi) = (a.min(b).min(n), a.max(b).min(n));
        prop_assert!(smooth_idf(n, lo) >= smooth_idf(n, hi));
    }

    #[test]
    fn svm_training_is_deterministic(points in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 4..20), seed in 0u64..100) {
        let xs: Vec<SparseVector> = points.iter().map(|(a, b)| SparseVector::from_dense(&[*a, *b])).collect();
        let ys: Vec<i8> = (0..xs.len()).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let cfg = SvmConfig { lambda: 0.01, epochs: 5, seed };
        let m1 = train_linear_svm(&xs, &ys, &cfg).unwrap();
        let m2 = train_linear_svm(&xs, &ys, &cfg).unwrap();
        prop_assert_eq!(m1.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>(), m2.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(m1.bias.to_bits(), m2.bias.to_bits());
    }

    #[test]
    fn sample_endings_prefix_and_exec_invariant(seed in any::<u64>(), k in 1usize..6, extra in 0usize..4) {
        let mock = MockModel::new("m", vec![MockRule::uniform("is a", &["red", "green", "blue", "<|endoftext|>"], "")]).unwrap();
        let spec = SamplingSpec::nucleus(0.95, 6, seed);
        let short = sample_endings(&mock, "Ann is a", &spec, k, Exec::Sequential).unwrap();
        let long = sample_endings(&mock, "Ann is a", &spec, k + extra, Exec::Parallel).unwrap();
        prop_assert_eq!(&long[..k], &short[..]);
    }

    #[test]
    fn expand_swap_is_an_involution(t in 0usize..7, a in "[A-Z][a-z]{2,6}", b in "[A-Z][a-z]{2,6}") {
        prop_assume!(a.to_lowercase() != b.to_lowercase());
        let template = &builtin_templates()[t];
        let (o, s) = expand_swap(template, &a, &b).unwrap();
        let (o2, s2) = expand_swap(template, &b, &a).unwrap();
        prop_assert_eq!(&o, &s2);
        prop_assert_eq!(&s, &o2);
        prop_assert_ne!(&o.gold_name, &s.gold_name);
        let r1 = resolve_predicted_slot(&o.gold_name, &o);
        let r2 = resolve_predicted_slot(&s.gold_name, &s);
        prop_assert_eq!(r1, r2);
        prop_assert_ne!(r1, Resolution::Invalid);
    }

    #[test]
    fn cv_score_is_symmetric_and_bounded(a in prop::collection::vec(document(), 6..12), b in prop::collection::vec(document(), 6..12)) {
        let cfg = TokenizerConfig::default();
        let plan = CvPlan { folds: 3, ..CvPlan::default() };
        let svm = SvmConfig { epochs: 3, ..SvmConfig::default() };
        if let Ok(ab) = cv_pair_score(&a, &b, &cfg, &plan, &svm) {
            let ba = cv_pair_score(&b, &a, &cfg, &plan, &svm).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
        }
    }
}

/// Scores each text by a fixed per-name value found in the prompt.
struct ByName(BTreeMap<String, f64>);

impl SentimentProvider for ByName {
    fn provider_id(&self) -> &str {
        "by-name"
    }

    fn score_batch(&self, texts: &[String]) -> nameprobe::Result<Vec<Option<f64>>> {
        Ok(texts
            .iter()
            .map(|t| self.0.iter().find(|(n, _)| t.starts_with(&format!("{n} "))).map(|(_, v)| *v))
            .collect())
    }
}

fn corpus(name: &str) -> EndingCorpus {
    EndingCorpus {
        given_name: name.into(),
        model_id: "m".into(),
        sampling: SamplingSpec::nucleus(0.9, 5, 0),
        seed: 0,
        template: TEMPLATE.into(),
        endings: vec![" a".into(), " b".into(), " c".into()],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sentiment_ranking_is_the_argsort(scores in prop::collection::btree_map("[A-Z][a-z]{2,6}", 0u32..5, 1..10), batch in 1usize..7) {
        let values: BTreeMap<String, f64> = scores.iter().map(|(k, v)| (k.clone(), f64::from(*v) / 4.0)).collect();
        let corpora: BTreeMap<String, EndingCorpus> = values.keys().map(|n| (n.clone(), corpus(n))).collect();
        let ranked = rank_names_by_negative(&corpora, &ByName(values.clone()), batch, Exec::Parallel).unwrap();
        let got: Vec<&str> = ranked.ranking.iter().map(|r| r.given_name.as_str()).collect();
        let mut want: Vec<(&String, f64)> = values.iter().map(|(k, v)| (k, *v)).collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let want: Vec<&str> = want.iter().map(|(k, _)| k.as_str()).collect();
        prop_assert_eq!(got, want);

        // A strictly increasing transform of the scores keeps the order.
        let squashed: BTreeMap<String, f64> = values.iter().map(|(k, v)| (k.clone(), v.sqrt() * 0.5)).collect();
        let again = rank_names_by_negative(&corpora, &ByName(squashed), 1, Exec::Sequential).unwrap();
        let names = |r: &nameprobe::sentiment::SentimentResult| r.ranking.iter().map(|x| x.given_name.clone()).collect::<Vec<_>>();
        prop_assert_eq!(names(&ranked), names(&again));
    }
}
