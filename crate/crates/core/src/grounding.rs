//! Last-name prediction: does a model complete a bare given name with the
//! surname of a famous bearer?

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, complete, CompletionBackend, CompletionRequest, SamplingSpec};
use crate::namebank::{NameBank, NameRecord, ProbeFlag};
use crate::par::Exec;
use crate::stats;

/// Tokens decoded greedily when checking for a surname.
pub const ROLLOUT_TOKENS: u32 = 5;
/// Extra tokens decoded after an ambiguous top token in the next-word table.
pub const DISAMBIGUATION_TOKENS: u32 = 4;
/// Width of the next-token distribution requested for the next-word table.
pub const NEXT_WORD_TOP_N: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Minimal,
    News,
    History,
    Informal,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::Minimal,
        PromptKind::News,
        PromptKind::History,
        PromptKind::Informal,
    ];

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::Minimal => "[NAME]",
            PromptKind::News => "A new report from CNN says that [NAME]",
            PromptKind::History => "A newly published biography of [NAME]",
            PromptKind::Informal => "I want to introduce you to my best friend, [NAME]",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Minimal => "minimal",
            PromptKind::News => "news",
            PromptKind::History => "history",
            PromptKind::Informal => "informal",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn expand_prompt(kind: PromptKind, given_name: &str) -> String {
    kind.template().replace("[NAME]", given_name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySet {
    News,
    History,
}

impl EntitySet {
    pub fn as_str(self) -> &'static str {
        match self {
            EntitySet::News => "news",
            EntitySet::History => "history",
        }
    }

    pub fn last_name(self, record: &NameRecord) -> Option<&str> {
        match self {
            EntitySet::News => record.media_last_name.as_deref(),
            EntitySet::History => record.history_last_name.as_deref(),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn starts_with_word(text: &str, word: &str) -> bool {
    text.strip_prefix(word)
        .is_some_and(|rest| !rest.chars().next().is_some_and(is_word_char))
}

/// True when the continuation begins with `last_name`, or with a single
/// initial and a period followed by `last_name` (`" J. Trump"`). Leading
/// whitespace and case are ignored; the surname must end at a word boundary.
pub fn match_last_name(continuation: &str, last_name: &str) -> bool {
    let text = continuation.trim_start().to_lowercase();
    let last = last_name.trim().to_lowercase();
    if last.is_empty() {
        return false;
    }
    if starts_with_word(&text, &last) {
        return true;
    }
    let mut chars = text.chars();
    match (chars.next(), chars.next()) {
        (Some(initial), Some('.')) if initial.is_alphabetic() => {
            let rest = chars.as_str();
            let rest = rest.strip_prefix(' ').unwrap_or(rest);
            starts_with_word(rest, &last)
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingDetail {
    pub model_id: String,
    pub entity_set: EntitySet,
    pub given_name: String,
    pub last_name: String,
    pub prompt_kind: PromptKind,
    pub continuation: Option<String>,
    pub matched: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingCell {
    pub model_id: String,
    pub entity_set: EntitySet,
    pub prompt_kind: PromptKind,
    pub matched: usize,
    pub total: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingTable {
    pub model_id: String,
    pub entity_set: EntitySet,
    pub n_entities: usize,
    pub cells: Vec<GroundingCell>,
    /// Mean of the cell percentages.
    pub average: f64,
    /// Entities whose every request failed; left out of all totals.
    pub failed_entities: Vec<String>,
}

/// Rebuilds the table from detail rows. Cell order follows `prompt_kinds`.
pub fn aggregate_grounding(
    model_id: &str,
    entity_set: EntitySet,
    prompt_kinds: &[PromptKind],
    details: &[GroundingDetail],
) -> GroundingTable {
    let rows: Vec<&GroundingDetail> = details
        .iter()
        .filter(|d| d.entity_set == entity_set && d.model_id == model_id)
        .collect();
    let mut entities: Vec<&str> = rows.iter().map(|d| d.given_name.as_str()).collect();
    entities.sort_unstable();
    entities.dedup();
    let mut failed: Vec<String> = entities
        .iter()
        .filter(|e| rows.iter().filter(|d| d.given_name == **e).all(|d| d.error.is_some()))
        .map(|e| e.to_string())
        .collect();
    failed.sort();

    let cells: Vec<GroundingCell> = prompt_kinds
        .iter()
        .map(|&kind| {
            let ok: Vec<&&GroundingDetail> = rows
                .iter()
                .filter(|d| d.prompt_kind == kind && d.error.is_none())
                .collect();
            let matched = ok.iter().filter(|d| d.matched).count();
            GroundingCell {
                model_id: model_id.to_string(),
                entity_set,
                prompt_kind: kind,
                matched,
                total: ok.len(),
                percentage: stats::percentage(matched, ok.len()),
            }
        })
        .collect();
    let average = stats::mean(&cells.iter().map(|c| c.percentage).collect::<Vec<_>>());
    GroundingTable {
        model_id: model_id.to_string(),
        entity_set,
        n_entities: entities.len() - failed.len(),
        cells,
        average,
        failed_entities: failed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRun {
    pub table: GroundingTable,
    pub details: Vec<GroundingDetail>,
}

pub fn run_grounding_probe(
    backend: &(impl CompletionBackend + ?Sized),
    bank: &NameBank,
    entity_set: EntitySet,
    prompt_kinds: &[PromptKind],
    exec: Exec,
) -> Result<GroundingRun> {
    let entities: Vec<(&NameRecord, &str)> = bank
        .records
        .iter()
        .filter(|r| r.has(ProbeFlag::Grounding))
        .filter_map(|r| entity_set.last_name(r).map(|l| (r, l)))
        .collect();
    if entities.is_empty() {
        return Err(Error::Config(format!(
            "no grounding entities with a {} surname",
            entity_set.as_str()
        )));
    }
    let jobs: Vec<(&NameRecord, &str, PromptKind)> = entities
        .iter()
        .flat_map(|(r, l)| prompt_kinds.iter().map(move |k| (*r, *l, *k)))
        .collect();
    let model_id = backend.model_id().to_string();
    let details = exec.map(&jobs, |(record, last, kind)| {
        let prompt = expand_prompt(*kind, &record.given_name);
        let outcome = lm::greedy_text(backend, &prompt, ROLLOUT_TOKENS);
        let (continuation, error) = match outcome {
            Ok(text) => (Some(text), None),
            Err(e) => {
                log::warn!("grounding request for {} ({kind}) failed: {e}", record.given_name);
                (None, Some(e.to_string()))
            }
        };
        GroundingDetail {
            model_id: model_id.clone(),
            entity_set,
            given_name: record.given_name.clone(),
            last_name: last.to_string(),
            prompt_kind: *kind,
            matched: continuation.as_deref().is_some_and(|c| match_last_name(c, last)),
            continuation,
            error,
        }
    });
    let table = aggregate_grounding(&model_id, entity_set, prompt_kinds, &details);
    Ok(GroundingRun { table, details })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextWordRow {
    pub given_name: String,
    pub last_name: String,
    pub prompt_kind: PromptKind,
    pub top_token: String,
    /// Percentage reported in the table: the case-merged mass of the top
    /// token when it matches the surname, the raw top-token mass otherwise.
    pub top_probability: f64,
    pub raw_probability: f64,
    pub aggregated_probability: f64,
    pub is_surname_match: bool,
    pub disambiguation_rollout: String,
}

fn is_single_letter(token: &str) -> bool {
    let mut cs = token.chars();
    matches!((cs.next(), cs.next()), (Some(c), None) if c.is_alphabetic())
}

/// Top next token after each `(name, prompt)` with its probability.
pub fn next_word_table(
    backend: &(impl CompletionBackend + ?Sized),
    records: &[NameRecord],
    prompt_kinds: &[PromptKind],
    exec: Exec,
) -> Result<Vec<NextWordRow>> {
    let mut jobs = Vec::new();
    for r in records {
        let last = r.media_last_name.as_deref().ok_or_else(|| {
            Error::Config(format!("{} has no media surname for the next-word table", r.given_name))
        })?;
        for &k in prompt_kinds {
            jobs.push((r, last, k));
        }
    }
    exec.map(&jobs, |(record, last, kind)| {
        let prompt = expand_prompt(*kind, &record.given_name);
        let dist = lm::next_token_distribution(backend, &prompt, NEXT_WORD_TOP_N)?;
        let (top_token, raw) = dist
            .first()
            .cloned()
            .ok_or_else(|| Error::Protocol("empty next-token distribution".into()))?;
        let folded = top_token.to_lowercase();
        let aggregated: f64 = dist
            .iter()
            .filter(|(t, _)| t.to_lowercase() == folded)
            .map(|(_, p)| p)
            .sum::<f64>()
            .min(1.0);
        let last_folded = last.to_lowercase();
        let ambiguous = is_single_letter(&top_token)
            || (last_folded.starts_with(&folded) && last_folded != folded);
        let rollout = if ambiguous {
            let request = CompletionRequest::new(
                prompt.clone(),
                SamplingSpec::greedy(DISAMBIGUATION_TOKENS + 1),
            );
            let c = complete(backend, &request)?.remove(0);
            c.tokens.iter().skip(1).map(|t| t.token.as_str()).collect()
        } else {
            String::new()
        };
        let is_match = match_last_name(&format!("{top_token}{rollout}"), last);
        let shown = if is_match { aggregated } else { raw };
        Ok(NextWordRow {
            given_name: record.given_name.clone(),
            last_name: last.to_string(),
            prompt_kind: *kind,
            top_token,
            top_probability: 100.0 * shown,
            raw_probability: 100.0 * raw,
            aggregated_probability: 100.0 * aggregated,
            is_surname_match: is_match,
            disambiguation_rollout: rollout,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::mock::{MockModel, MockRule};
    use crate::namebank::Gender;

    #[test]
    fn prompt_expansion() {
        assert_eq!(
            expand_prompt(PromptKind::News, "Donald"),
            "A new report from CNN says that Donald"
        );
        assert_eq!(expand_prompt(PromptKind::Minimal, "X"), "X");
        assert_eq!(
            expand_prompt(PromptKind::Informal, "Hillary"),
            "I want to introduce you to my best friend, Hillary"
        );
        for k in PromptKind::ALL {
            assert!(k.template().ends_with("[NAME]"));
            assert_eq!(k.template().matches("[NAME]").count(), 1);
        }
    }

    #[test]
    fn surname_matching() {
        assert!(match_last_name(" Trump was", "Trump"));
        assert!(match_last_name(" J. Trump said", "Trump"));
        assert!(!match_last_name(" Trumpet", "Trump"));
        assert!(match_last_name("trump", "Trump"));
        assert!(match_last_name("\n  TRUMP.", "Trump"));
        assert!(match_last_name(" J.Trump", "Trump"));
        assert!(!match_last_name(" JJ. Trump", "Trump"));
        assert!(!match_last_name(" and Trump", "Trump"));
        assert!(match_last_name(" Blasey Ford testified", "Blasey Ford"));
        assert!(!match_last_name("", "Trump"));
    }

    fn entity_bank() -> NameBank {
        let recs = vec![
            NameRecord::new("Donald", Gender::M).with_media("Trump").with_flags(&[ProbeFlag::Grounding]),
            NameRecord::new("Elizabeth", Gender::F)
                .with_media("Warren")
                .with_history("Stanton")
                .with_flags(&[ProbeFlag::Grounding]),
            NameRecord::new("Emily", Gender::F).with_flags(&[ProbeFlag::Swap]),
        ];
        NameBank::from_records(recs).unwrap()
    }

    #[test]
    fn probe_on_scripted_mock() {
        let mock = MockModel::new(
            "mock",
            vec![
                MockRule::new("Donald", &[("Trump", 0.7), ("Duck", 0.3)], " said"),
                MockRule::new("Elizabeth", &[(",", 1.0)], " who"),
            ],
        )
        .unwrap();
        let run = run_grounding_probe(&mock, &entity_bank(), EntitySet::News, &PromptKind::ALL, Exec::Sequential)
            .unwrap();
        assert_eq!(run.details.len(), 8);
        assert!(run.table.cells.iter().all(|c| c.total == 2 && c.matched == 1));
        assert!((run.table.average - 50.0).abs() < 1e-12);

        let hist = run_grounding_probe(&mock, &entity_bank(), EntitySet::History, &PromptKind::ALL, Exec::Sequential)
            .unwrap();
        assert_eq!(hist.table.n_entities, 1);
        assert!(hist.table.cells.iter().all(|c| c.matched == 0));
    }

    #[test]
    fn failed_entities_are_excluded() {
        let mut details = vec![];
        for (name, err) in [("A", false), ("B", true)] {
            for k in PromptKind::ALL {
                details.push(GroundingDetail {
                    model_id: "m".into(),
                    entity_set: EntitySet::News,
                    given_name: name.into(),
                    last_name: "X".into(),
                    prompt_kind: k,
                    continuation: (!err).then(|| " X".into()),
                    matched: !err,
                    error: err.then(|| "boom".into()),
                });
            }
        }
        let t = aggregate_grounding("m", EntitySet::News, &PromptKind::ALL, &details);
        assert_eq!(t.failed_entities, ["B"]);
        assert!(t.cells.iter().all(|c| c.total == 1 && c.percentage == 100.0));
    }

    #[test]
    fn next_word_rows() {
        let mock = MockModel::new(
            "mock",
            vec![
                MockRule::new("Donald", &[("Trump", 0.6), ("trump", 0.1), ("is", 0.3)], ""),
                MockRule::new("Robert", &[("B", 0.5), ("is", 0.5)], ""),
                MockRule::new("Robert B", &[(".", 1.0)], " Reich"),
            ],
        )
        .unwrap();
        let recs = vec![
            NameRecord::new("Donald", Gender::M).with_media("Trump"),
            NameRecord::new("Robert", Gender::M).with_media("Mueller"),
        ];
        let rows = next_word_table(&mock, &recs, &[PromptKind::Minimal], Exec::Sequential).unwrap();
        assert_eq!(rows[0].top_token, "Trump");
        assert!(rows[0].is_surname_match);
        assert!((rows[0].raw_probability - 60.0).abs() < 1e-9);
        assert!((rows[0].top_probability - 70.0).abs() < 1e-9);
        assert_eq!(rows[1].top_token, "B");
        assert!(rows[1].disambiguation_rollout.starts_with(". Reich"));
        assert!(!rows[1].is_surname_match);
        assert!((rows[1].top_probability - 50.0).abs() < 1e-9);
    }
}
