//! Name-swap probe: fill QA templates with a pair of names in both orders
//! and count how often the answer moves to the other slot.
//!
//! A flip is judged at the slot level. A model that keeps answering the
//! person in the same role is stable even though its answer string changes
//! with the names; a model that keeps answering the same name is flipping.

pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::namebank::{filter_bank, same_gender_pairs, Gender, NameBank, NameRecord, ProbeFlag};
use crate::par::Exec;
use crate::seed;
use crate::stats;

pub const NAME1: &str = "[NAME1]";
pub const NAME2: &str = "[NAME2]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    #[serde(rename = "NAME1")]
    Name1,
    #[serde(rename = "NAME2")]
    Name2,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Name1 => "NAME1",
            Slot::Name2 => "NAME2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaFormat {
    SquadQa,
    WinograndeFitb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapTemplate {
    pub template_id: String,
    pub context: String,
    pub question: String,
    pub answer_slot: Slot,
    pub format: QaFormat,
}

impl SwapTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.template_id.trim().is_empty() {
            return Err(Error::Config("template with an empty id".into()));
        }
        for marker in [NAME1, NAME2] {
            if !self.context.contains(marker) {
                return Err(Error::Config(format!(
                    "template {} has no {marker} in its context",
                    self.template_id
                )));
            }
        }
        if self.question.trim().is_empty() {
            return Err(Error::Config(format!("template {} has an empty question", self.template_id)));
        }
        Ok(())
    }
}

/// The templates shipped with the crate.
pub fn builtin_templates() -> Vec<SwapTemplate> {
    parse_templates(include_str!("../../data/swap_templates.json"), "builtin").expect("bundled templates are valid")
}

pub fn parse_templates(text: &str, source: &str) -> Result<Vec<SwapTemplate>> {
    let templates: Vec<SwapTemplate> =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
    if templates.is_empty() {
        return Err(Error::Config(format!("{source}: no templates")));
    }
    let mut ids: Vec<&str> = templates.iter().map(|t| t.template_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("{source}: duplicate template id {}", w[0])));
    }
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<SwapTemplate>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_templates(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapInstance {
    pub template_id: String,
    pub name_in_slot1: String,
    pub name_in_slot2: String,
    pub expanded_context: String,
    pub expanded_question: String,
    pub gold_name: String,
    pub format: QaFormat,
}

impl SwapInstance {
    pub fn name_in(&self, slot: Slot) -> &str {
        match slot {
            Slot::Name1 => &self.name_in_slot1,
            Slot::Name2 => &self.name_in_slot2,
        }
    }

    pub fn request(&self) -> QaRequest {
        QaRequest {
            context: self.expanded_context.clone(),
            question: self.expanded_question.clone(),
            format: self.format,
            candidates: [self.name_in_slot1.clone(), self.name_in_slot2.clone()],
        }
    }
}

fn fill(text: &str, slot1: &str, slot2: &str) -> String {
    text.replace(NAME1, slot1).replace(NAME2, slot2)
}

pub fn expand_instance(template: &SwapTemplate, slot1: &str, slot2: &str) -> SwapInstance {
    let gold = match template.answer_slot {
        Slot::Name1 => slot1,
        Slot::Name2 => slot2,
    };
    SwapInstance {
        template_id: template.template_id.clone(),
        name_in_slot1: slot1.to_string(),
        name_in_slot2: slot2.to_string(),
        expanded_context: fill(&template.context, slot1, slot2),
        expanded_question: fill(&template.question, slot1, slot2),
        gold_name: gold.to_string(),
        format: template.format,
    }
}

/// `(a, b)` and `(b, a)` expansions of one template.
pub fn expand_swap(template: &SwapTemplate, name_a: &str, name_b: &str) -> Result<(SwapInstance, SwapInstance)> {
    if name_a.trim().to_lowercase() == name_b.trim().to_lowercase() {
        return Err(Error::InvalidRequest(format!("cannot swap {name_a} with itself")));
    }
    Ok((
        expand_instance(template, name_a, name_b),
        expand_instance(template, name_b, name_a),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Slot1,
    Slot2,
    Invalid,
}

impl Resolution {
    pub fn slot(self) -> Option<Slot> {
        match self {
            Resolution::Slot1 => Some(Slot::Name1),
            Resolution::Slot2 => Some(Slot::Name2),
            Resolution::Invalid => None,
        }
    }
}

/// Case-insensitive whole-word occurrence of `name` in `text`.
fn mentions(text: &str, name: &str) -> bool {
    let text = text.to_lowercase();
    let name = name.trim().to_lowercase();
    if name.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    text.match_indices(&name).any(|(at, m)| {
        let before = text[..at].chars().next_back();
        let after = text[at + m.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}

/// Which slot's name the answer refers to; both or neither is invalid.
pub fn resolve_predicted_slot(answer_text: &str, instance: &SwapInstance) -> Resolution {
    let one = mentions(answer_text, &instance.name_in_slot1);
    let two = mentions(answer_text, &instance.name_in_slot2);
    match (one, two) {
        (true, false) => Resolution::Slot1,
        (false, true) => Resolution::Slot2,
        _ => Resolution::Invalid,
    }
}

/// QA wire request: `candidates` are the names in slot order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaRequest {
    pub context: String,
    pub question: String,
    pub format: QaFormat,
    pub candidates: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResponse {
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

pub trait QaBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn answer(&self, request: &QaRequest) -> Result<QaResponse>;
    /// Main-task score the endpoint reports about itself, if any.
    fn task_score(&self) -> Option<f64> {
        None
    }
}

impl<B: QaBackend + ?Sized> QaBackend for std::sync::Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn answer(&self, request: &QaRequest) -> Result<QaResponse> {
        (**self).answer(request)
    }

    fn task_score(&self) -> Option<f64> {
        (**self).task_score()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOutcome {
    Flip,
    Stable,
    Invalid,
    /// The endpoint failed for at least one ordering.
    Unscored,
}

/// Both orderings of one (template, pair). The original ordering puts
/// `name_a` in slot 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub template_id: String,
    pub name_a: String,
    pub name_b: String,
    pub gender: Gender,
    pub original_answer: Option<String>,
    pub swapped_answer: Option<String>,
    pub original_slot: Resolution,
    pub swapped_slot: Resolution,
    pub answer_slot: Slot,
    pub outcome: PairOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn classify(original: Resolution, swapped: Resolution) -> PairOutcome {
    match (original.slot(), swapped.slot()) {
        (Some(a), Some(b)) if a != b => PairOutcome::Flip,
        (Some(_), Some(_)) => PairOutcome::Stable,
        _ => PairOutcome::Invalid,
    }
}

/// Queries both orderings, original first.
pub fn is_flip(
    qa: &(impl QaBackend + ?Sized),
    template: &SwapTemplate,
    name_a: &str,
    name_b: &str,
    gender: Gender,
) -> Result<PairRecord> {
    let (orig, swapped) = expand_swap(template, name_a, name_b)?;
    let mut record = PairRecord {
        template_id: template.template_id.clone(),
        name_a: name_a.to_string(),
        name_b: name_b.to_string(),
        gender,
        original_answer: None,
        swapped_answer: None,
        original_slot: Resolution::Invalid,
        swapped_slot: Resolution::Invalid,
        answer_slot: template.answer_slot,
        outcome: PairOutcome::Unscored,
        error: None,
    };
    let answers = qa
        .answer(&orig.request())
        .and_then(|a| qa.answer(&swapped.request()).map(|b| (a, b)));
    match answers {
        Ok((a, b)) => {
            record.original_slot = resolve_predicted_slot(&a.answer_text, &orig);
            record.swapped_slot = resolve_predicted_slot(&b.answer_text, &swapped);
            record.original_answer = Some(a.answer_text);
            record.swapped_answer = Some(b.answer_text);
            record.outcome = classify(record.original_slot, record.swapped_slot);
        }
        Err(e) => {
            log::warn!("swap pair ({name_a}, {name_b}) on {} unscored: {e}", template.template_id);
            record.error = Some(e.to_string());
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotAccuracy {
    pub given_name: String,
    pub slot: Slot,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub model_id: String,
    pub overall_flip_pct: f64,
    /// Mean of the five highest per-template rates (ties by template id).
    pub top5_flip_pct: f64,
    pub per_name: BTreeMap<String, f64>,
    pub per_template: BTreeMap<String, f64>,
    pub per_slot_accuracy: Vec<SlotAccuracy>,
    /// Valid answers naming the gold slot, over all valid answers.
    pub task_accuracy_on_probe: f64,
    /// Share of scored pairs with an unresolvable answer; these are left
    /// out of every flip denominator.
    pub invalid_pct: f64,
    pub n_flips: usize,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub n_unscored: usize,
    pub task_score: Option<f64>,
}

pub fn top5_mean(per_template: &BTreeMap<String, f64>) -> f64 {
    let mut rates: Vec<(&String, f64)> = per_template.iter().map(|(k, v)| (k, *v)).collect();
    rates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let top: Vec<f64> = rates.iter().take(5).map(|r| r.1).collect();
    stats::mean(&top)
}

#[derive(Default)]
struct Tally {
    hits: usize,
    total: usize,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += usize::from(hit);
    }
}

/// Rebuilds the report from pair records.
pub fn aggregate_flips(model_id: &str, records: &[PairRecord], task_score: Option<f64>) -> FlipReport {
    let mut per_name: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut per_template: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut per_slot: BTreeMap<(&str, Slot), Tally> = BTreeMap::new();
    let mut overall = Tally::default();
    let mut accuracy = Tally::default();
    let (mut n_invalid, mut n_unscored) = (0, 0);

    for r in records {
        // Per-slot and probe accuracy look at every valid single answer.
        for (slot1, slot2, res) in [
            (&r.name_a, &r.name_b, r.original_slot),
            (&r.name_b, &r.name_a, r.swapped_slot),
        ] {
            if r.outcome == PairOutcome::Unscored {
                continue;
            }
            if let Some(pred) = res.slot() {
                let correct = pred == r.answer_slot;
                accuracy.add(correct);
                per_slot.entry((slot1.as_str(), Slot::Name1)).or_default().add(correct);
                per_slot.entry((slot2.as_str(), Slot::Name2)).or_default().add(correct);
            }
        }
        let flip = match r.outcome {
            PairOutcome::Flip => true,
            PairOutcome::Stable => false,
            PairOutcome::Invalid => {
                n_invalid += 1;
                continue;
            }
            PairOutcome::Unscored => {
                n_unscored += 1;
                continue;
            }
        };
        overall.add(flip);
        per_template.entry(&r.template_id).or_default().add(flip);
        per_name.entry(&r.name_a).or_default().add(flip);
        per_name.entry(&r.name_b).or_default().add(flip);
    }

    let pct = |t: &Tally| stats::percentage(t.hits, t.total);
    let per_template: BTreeMap<String, f64> = per_template.iter().map(|(k, t)| (k.to_string(), pct(t))).collect();
    FlipReport {
        model_id: model_id.to_string(),
        overall_flip_pct: pct(&overall),
        top5_flip_pct: top5_mean(&per_template),
        per_name: per_name.iter().map(|(k, t)| (k.to_string(), pct(t))).collect(),
        per_template,
        per_slot_accuracy: per_slot
            .iter()
            .map(|((name, slot), t)| SlotAccuracy {
                given_name: name.to_string(),
                slot: *slot,
                correct: t.hits,
                total: t.total,
                accuracy: pct(t),
            })
            .collect(),
        task_accuracy_on_probe: pct(&accuracy),
        invalid_pct: stats::percentage(n_invalid, overall.total + n_invalid),
        n_flips: overall.hits,
        n_valid: overall.total,
        n_invalid,
        n_unscored,
        task_score,
    }
}

/// Same-gender pairs of `records`, all of them when the budget allows,
/// otherwise a seeded sample of `budget`. Returned in sorted order.
pub fn sample_pairs(records: &[NameRecord], budget: Option<usize>, seed: u64) -> Vec<(NameRecord, NameRecord)> {
    let mut pairs = same_gender_pairs(records);
    if let Some(b) = budget.filter(|b| *b < pairs.len()) {
        pairs.shuffle(&mut seed::rng(seed));
        pairs.truncate(b);
        pairs.sort_by(|x, y| (&x.0.given_name, &x.1.given_name).cmp(&(&y.0.given_name, &y.1.given_name)));
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapRun {
    pub report: FlipReport,
    pub records: Vec<PairRecord>,
}

pub fn run_swap_probe(
    qa: &(impl QaBackend + ?Sized),
    templates: &[SwapTemplate],
    bank: &NameBank,
    pair_budget: Option<usize>,
    seed: u64,
    exec: Exec,
) -> Result<SwapRun> {
    if templates.is_empty() {
        return Err(Error::Config("no swap templates".into()));
    }
    for t in templates {
        t.validate()?;
    }
    let names = filter_bank(bank, ProbeFlag::Swap, None);
    let pairs = sample_pairs(&names, pair_budget, seed);
    if pairs.is_empty() {
        return Err(Error::TooSmall("need at least two same-gender names flagged for swap".into()));
    }
    let jobs: Vec<(&SwapTemplate, &NameRecord, &NameRecord)> = pairs
        .iter()
        .flat_map(|(a, b)| templates.iter().map(move |t| (t, a, b)))
        .collect();
    let records = exec
        .map(&jobs, |(t, a, b)| is_flip(qa, t, &a.given_name, &b.given_name, a.gender))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate_flips(qa.model_id(), &records, qa.task_score());
    Ok(SwapRun { report, records })
}
