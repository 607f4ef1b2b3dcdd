use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nameprobe::lm::mock::{MockModel, MockRule};
use nameprobe::lm::SamplingSpec;
use nameprobe::namebank::{Gender, NameBank, NameRecord, ProbeFlag};
use nameprobe::par::Exec;
use nameprobe::recovery::{build_corpora, recovery_scores, EndingCorpus, ScrubOptions};
use nameprobe::textml::{CvPlan, SvmConfig};

const WORDS: [&str; 24] = [
    "teacher", "writer", "leader", "friend", "singer", "lawyer", "doctor", "farmer", "great", "young", "local",
    "famous", "quiet", "kind", "strong", "new", "politics", "music", "sports", "science", "church", "film", "army",
    "art",
];

/// `per_gender` names of each gender with 50 endings each. Every name draws
/// from the shared vocabulary with its own skew.
fn setup(per_gender: usize) -> (NameBank, BTreeMap<String, EndingCorpus>) {
    let mut records = Vec::new();
    let mut rules = Vec::new();
    for i in 0..per_gender * 2 {
        let name = format!("Name{i:03}");
        let gender = if i < per_gender { Gender::F } else { Gender::M };
        records.push(NameRecord::new(name.clone(), gender).with_flags(&[ProbeFlag::RecoverySentiment]));
        let weights: Vec<f64> = (0..WORDS.len()).map(|k| 1.0 + ((i * 7 + k * 3) % 5) as f64).collect();
        let total: f64 = weights.iter().sum();
        let dist: Vec<(&str, f64)> = WORDS.iter().zip(&weights).map(|(w, p)| (*w, p / total)).collect();
        rules.push(MockRule::new(&format!("{name} is a"), &dist, ""));
    }
    let bank = NameBank::from_records(records).unwrap();
    let mock = MockModel::new("bench", rules).unwrap();
    let names: Vec<&str> = bank.given_names().collect();
    let corpora = build_corpora(&mock, &names, &SamplingSpec::nucleus(0.9, 20, 1), 50, Exec::Parallel).unwrap();
    (bank, corpora)
}

fn pair_scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("recovery_scores");
    group.sample_size(10);
    for per_gender in [8, 16] {
        let (bank, corpora) = setup(per_gender);
        for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, per_gender * 2), &exec, |b, &exec| {
                b.iter(|| {
                    recovery_scores(
                        &corpora,
                        &bank,
                        &CvPlan::default(),
                        &SvmConfig::default(),
                        ScrubOptions::default(),
                        exec,
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, pair_scoring);
criterion_main!(benches);
