//! Run directories: detail rows, rendered tables and the consistency check
//! that ties them together.
//!
//! ```text
//! <run>/manifest.json
//! <run>/details/{grounding,next_word,recovery_pairs,sentiment,swap}.jsonl
//! <run>/corpora/<name>.json
//! <run>/tables/<table>.{csv,json,md}
//! ```
//!
//! Each `tables/<table>.json` holds the rendered rows plus the full-precision
//! aggregate they were rendered from. Percentages print with one decimal and
//! scores with three, rounding ties to even.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grounding::{aggregate_grounding, GroundingDetail, GroundingTable, NextWordRow, PromptKind};
use crate::lm::SamplingSpec;
use crate::namebank::{Gender, NameBank};
use crate::recovery::{aggregate_pairs, score_matrix, EndingCorpus, PairScore, RecoveryResult};
use crate::sentiment::{aggregate_sentiment, SentimentDetail, SentimentResult};
use crate::stats::fmt_fixed;
use crate::swap::{aggregate_flips, FlipReport, PairRecord, Slot};

pub const PCT_DIGITS: usize = 1;
pub const SCORE_DIGITS: usize = 3;
/// Tolerance for recomputed real-valued aggregates.
pub const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    /// A given name; bold in markdown when it is a media name.
    Name(String, bool),
    Int(u64),
    Fixed(f64, usize),
    Missing,
}

impl Cell {
    fn plain(&self) -> String {
        match self {
            Cell::Text(s) | Cell::Name(s, _) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Fixed(x, d) => fmt_fixed(*x, *d),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) | Cell::Name(s, _) => Value::String(s.clone()),
            Cell::Int(n) => json!(n),
            // The formatted digits, as a number.
            Cell::Fixed(..) => serde_json::from_str(&self.plain()).expect("formatted float parses"),
            Cell::Missing => Value::Null,
        }
    }
}

fn pct(x: f64) -> Cell {
    Cell::Fixed(x, PCT_DIGITS)
}

fn score(x: f64) -> Cell {
    Cell::Fixed(x, SCORE_DIGITS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Lines printed under the markdown table.
    pub notes: Vec<String>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let line = |cells: Vec<String>| cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
        out.push_str(&line(self.columns.clone()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row.iter().map(Cell::plain).collect()));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", self.columns.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(self.columns.len()));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Name(n, true) => format!("**{}**", esc(n)),
                    other => esc(&other.plain()),
                })
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        for n in &self.notes {
            let _ = write!(out, "\n{n}\n");
        }
        out
    }

    /// `{"table", "columns", "rows", "aggregate"}`.
    pub fn to_json(&self, aggregate: &Value) -> String {
        let rows: Vec<Vec<Value>> = self.rows.iter().map(|r| r.iter().map(Cell::json).collect()).collect();
        let v = json!({
            "table": self.name,
            "columns": self.columns,
            "rows": rows,
            "aggregate": aggregate,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("json values serialize");
        s.push('\n');
        s
    }
}

fn media_names(bank: &NameBank) -> BTreeSet<&str> {
    bank.records
        .iter()
        .filter(|r| r.is_media_name())
        .map(|r| r.given_name.as_str())
        .collect()
}

fn name_cell(name: &str, media: &BTreeSet<&str>) -> Cell {
    Cell::Name(name.to_string(), media.contains(name))
}

/// One row per (model, entity set): the prompt cells then their average.
pub fn grounding_table(tables: &[GroundingTable]) -> Table {
    let kinds: Vec<PromptKind> = tables
        .first()
        .map(|t| t.cells.iter().map(|c| c.prompt_kind).collect())
        .unwrap_or_else(|| PromptKind::ALL.to_vec());
    let mut cols = vec!["model", "entity_set", "n_entities"];
    cols.extend(kinds.iter().map(|k| k.as_str()));
    cols.push("avg");
    let mut t = Table::new("grounding", &cols);
    for g in tables {
        let mut row = vec![
            Cell::Text(g.model_id.clone()),
            Cell::Text(g.entity_set.as_str().into()),
            Cell::Int(g.n_entities as u64),
        ];
        row.extend(g.cells.iter().map(|c| pct(c.percentage)));
        row.push(pct(g.average));
        t.rows.push(row);
        if !g.failed_entities.is_empty() {
            t.notes.push(format!(
                "{} {}: excluded after every request failed: {}",
                g.model_id,
                g.entity_set.as_str(),
                g.failed_entities.join(", ")
            ));
        }
    }
    t
}

/// Long form of the grounding table with raw counts.
pub fn grounding_cells_table(tables: &[GroundingTable]) -> Table {
    let mut t = Table::new("grounding_cells", &["model", "entity_set", "prompt", "matched", "total", "pct"]);
    for g in tables {
        for c in &g.cells {
            t.rows.push(vec![
                Cell::Text(c.model_id.clone()),
                Cell::Text(c.entity_set.as_str().into()),
                Cell::Text(c.prompt_kind.as_str().into()),
                Cell::Int(c.matched as u64),
                Cell::Int(c.total as u64),
                pct(c.percentage),
            ]);
        }
    }
    t
}

pub fn next_word_table(rows: &[NextWordRow], bank: &NameBank) -> Table {
    let media = media_names(bank);
    let mut t = Table::new(
        "next_word",
        &["given_name", "prompt", "top_token", "rollout", "pct", "raw_pct", "aggregated_pct", "surname_match"],
    );
    for r in rows {
        t.rows.push(vec![
            name_cell(&r.given_name, &media),
            Cell::Text(r.prompt_kind.as_str().into()),
            Cell::Text(r.top_token.clone()),
            Cell::Text(r.disambiguation_rollout.clone()),
            pct(r.top_probability),
            pct(r.raw_probability),
            pct(r.aggregated_probability),
            Cell::Text(r.is_surname_match.to_string()),
        ]);
    }
    t
}

pub fn recovery_table(result: &RecoveryResult, bank: &NameBank) -> Table {
    let media = media_names(bank);
    let mut t = Table::new("recovery", &["rank", "given_name", "gender", "mean_f1", "n_pairs"]);
    for (i, s) in result.scores.iter().enumerate() {
        t.rows.push(vec![
            Cell::Int(i as u64 + 1),
            name_cell(&s.given_name, &media),
            Cell::Text(format!("{:?}", s.gender)),
            score(s.mean_pairwise_f1),
            Cell::Int(s.n_pairs as u64),
        ]);
    }
    t.notes.push(format!(
        "Population: {} ± {}",
        fmt_fixed(result.population_mean, SCORE_DIGITS),
        fmt_fixed(result.population_std, SCORE_DIGITS)
    ));
    t.notes
        .push("Every given name in the bank, not only the pair's two, is masked before featurization.".into());
    t
}

pub fn recovery_matrix_table(result: &RecoveryResult, gender: Gender) -> Table {
    let (names, m) = score_matrix(result, gender);
    let mut cols = vec!["given_name"];
    cols.extend(names.iter().map(String::as_str));
    let mut t = Table::new(&format!("recovery_matrix_{}", gender_tag(gender)), &cols);
    for (name, row) in names.iter().zip(&m) {
        let mut cells = vec![Cell::Text(name.clone())];
        cells.extend(row.iter().map(|v| v.map_or(Cell::Missing, score)));
        t.rows.push(cells);
    }
    t
}

fn gender_tag(g: Gender) -> &'static str {
    match g {
        Gender::F => "f",
        Gender::M => "m",
    }
}

pub fn sentiment_table(result: &SentimentResult, bank: &NameBank) -> Table {
    let media = media_names(bank);
    let mut t = Table::new(
        "sentiment",
        &["rank", "given_name", "avg_negative", "n_endings", "n_skipped", "provider"],
    );
    for (i, r) in result.ranking.iter().enumerate() {
        t.rows.push(vec![
            Cell::Int(i as u64 + 1),
            name_cell(&r.given_name, &media),
            score(r.avg_negative),
            Cell::Int(r.n_endings as u64),
            Cell::Int(r.n_skipped as u64),
            Cell::Text(r.provider_id.clone()),
        ]);
    }
    t.notes.push(format!(
        "Population: {} ± {}; spread of the ten least negative: {}",
        fmt_fixed(result.population_mean, SCORE_DIGITS),
        fmt_fixed(result.population_std, SCORE_DIGITS),
        fmt_fixed(result.least_negative_std, SCORE_DIGITS)
    ));
    t.notes.push("Each text scored is the prompt followed by the ending.".into());
    if !result.unscored_names.is_empty() {
        t.notes.push(format!("Not scored: {}", result.unscored_names.join(", ")));
    }
    t
}

/// Names by flip rate, highest first, with per-slot accuracy.
pub fn swap_names_table(report: &FlipReport, bank: &NameBank) -> Table {
    let media = media_names(bank);
    let mut t = Table::new(
        "swap_names",
        &["rank", "given_name", "flip_pct", "acc_as_name1", "acc_as_name2"],
    );
    let mut names: Vec<(&String, f64)> = report.per_name.iter().map(|(k, v)| (k, *v)).collect();
    names.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let acc = |name: &str, slot: Slot| {
        report
            .per_slot_accuracy
            .iter()
            .find(|a| a.given_name == name && a.slot == slot)
            .map_or(Cell::Missing, |a| pct(a.accuracy))
    };
    for (i, (name, rate)) in names.iter().enumerate() {
        t.rows.push(vec![
            Cell::Int(i as u64 + 1),
            name_cell(name, &media),
            pct(*rate),
            acc(name, Slot::Name1),
            acc(name, Slot::Name2),
        ]);
    }
    t
}

pub fn swap_summary_table(report: &FlipReport) -> Table {
    let mut t = Table::new(
        "swap_summary",
        &["model", "flips", "top5_flips", "probe_accuracy", "invalid_pct", "n_valid", "n_invalid", "n_unscored", "task_score"],
    );
    t.rows.push(vec![
        Cell::Text(report.model_id.clone()),
        pct(report.overall_flip_pct),
        pct(report.top5_flip_pct),
        pct(report.task_accuracy_on_probe),
        pct(report.invalid_pct),
        Cell::Int(report.n_valid as u64),
        Cell::Int(report.n_invalid as u64),
        Cell::Int(report.n_unscored as u64),
        report.task_score.map_or(Cell::Missing, pct),
    ]);
    t.notes.push("Pairs with an unresolvable answer are excluded from flip rates.".into());
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the canonical run configuration.
    pub run_id: String,
    pub model_id: String,
    #[serde(default)]
    pub qa_model_id: Option<String>,
    pub probes: Vec<String>,
    pub sampling: SamplingSpec,
    pub seeds: BTreeMap<String, u64>,
    pub namebank_checksum: String,
    pub provider_ids: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

/// Everything a run produced; probes that did not run are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunResults {
    pub grounding: Option<(Vec<GroundingTable>, Vec<GroundingDetail>)>,
    pub next_word: Option<Vec<NextWordRow>>,
    pub corpora: Option<BTreeMap<String, EndingCorpus>>,
    pub recovery: Option<RecoveryResult>,
    pub sentiment: Option<SentimentResult>,
    pub swap: Option<(FlipReport, Vec<PairRecord>)>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let parent = path.parent().expect("artifact paths have a parent");
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("detail rows serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str, source: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: source.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Aggregates as persisted next to the tables: detail vectors stripped.
fn stripped_recovery(r: &RecoveryResult) -> Value {
    let mut v = serde_json::to_value(r).expect("serializable");
    v["pairs"] = json!([]);
    v
}

fn stripped_sentiment(r: &SentimentResult) -> Value {
    let mut v = serde_json::to_value(r).expect("serializable");
    v["details"] = json!([]);
    v
}

/// Every artifact path (relative to the run directory) and its bytes.
pub fn render(results: &RunResults, bank: &NameBank) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    let mut emit = |table: Table, aggregate: Value| {
        let base = PathBuf::from("tables");
        out.insert(base.join(format!("{}.csv", table.name)), table.to_csv().into_bytes());
        out.insert(base.join(format!("{}.md", table.name)), table.to_markdown().into_bytes());
        out.insert(base.join(format!("{}.json", table.name)), table.to_json(&aggregate).into_bytes());
    };
    let mut details: Vec<(&str, String)> = Vec::new();

    if let Some((tables, rows)) = &results.grounding {
        let agg = serde_json::to_value(tables).expect("serializable");
        emit(grounding_table(tables), agg.clone());
        emit(grounding_cells_table(tables), agg);
        details.push(("grounding", to_jsonl(rows)));
    }
    if let Some(rows) = &results.next_word {
        emit(next_word_table(rows, bank), Value::Null);
        details.push(("next_word", to_jsonl(rows)));
    }
    if let Some(r) = &results.recovery {
        emit(recovery_table(r, bank), stripped_recovery(r));
        for g in [Gender::F, Gender::M] {
            if r.scores.iter().any(|s| s.gender == g) {
                emit(recovery_matrix_table(r, g), Value::Null);
            }
        }
        details.push(("recovery_pairs", to_jsonl(&r.pairs)));
    }
    if let Some(s) = &results.sentiment {
        emit(sentiment_table(s, bank), stripped_sentiment(s));
        details.push(("sentiment", to_jsonl(&s.details)));
    }
    if let Some((report, records)) = &results.swap {
        let agg = serde_json::to_value(report).expect("serializable");
        emit(swap_names_table(report, bank), agg.clone());
        emit(swap_summary_table(report), agg);
        details.push(("swap", to_jsonl(records)));
    }
    if let Some(corpora) = &results.corpora {
        for (name, c) in corpora {
            let mut text = serde_json::to_string_pretty(c).expect("serializable");
            text.push('\n');
            out.insert(PathBuf::from("corpora").join(format!("{name}.json")), text.into_bytes());
        }
    }
    for (name, text) in details {
        out.insert(PathBuf::from("details").join(format!("{name}.jsonl")), text.into_bytes());
    }
    out
}

/// Writes manifest, details and tables. Refuses to write anything when the
/// results do not pass [`verify_results`].
pub fn write_run(dir: &Path, manifest: &RunManifest, results: &RunResults, bank: &NameBank) -> Result<()> {
    let problems = verify_results(results);
    if !problems.is_empty() {
        return Err(Error::Inconsistent(
            problems.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    for (rel, bytes) in render(results, bank) {
        write_atomic(&dir.join(rel), &bytes)?;
    }
    write_manifest(dir, manifest)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_atomic(&dir.join("manifest.json"), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discrepancy {
    pub artifact: String,
    pub message: String,
}

impl std::fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.artifact, self.message)
    }
}

/// Structural comparison: numbers within [`SCORE_TOLERANCE`] (integers
/// exactly), everything else exactly.
pub fn compare_values(path: &str, expected: &Value, actual: &Value, out: &mut Vec<String>) {
    match (expected, actual) {
        (Value::Number(a), Value::Number(b)) => {
            let exact = a.is_u64() || a.is_i64();
            let same = if exact && (b.is_u64() || b.is_i64()) {
                a == b
            } else {
                match (a.as_f64(), b.as_f64()) {
                    (Some(x), Some(y)) => (x - y).abs() <= SCORE_TOLERANCE,
                    _ => false,
                }
            };
            if !same {
                out.push(format!("{path}: recomputed {a}, stored {b}"));
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            if a.len() != b.len() {
                out.push(format!("{path}: recomputed {} entries, stored {}", a.len(), b.len()));
                return;
            }
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                compare_values(&format!("{path}[{i}]"), x, y, out);
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
            for k in keys {
                match (a.get(k), b.get(k)) {
                    (Some(x), Some(y)) => compare_values(&format!("{path}.{k}"), x, y, out),
                    _ => out.push(format!("{path}.{k}: present on one side only")),
                }
            }
        }
        (a, b) if a == b => {}
        (a, b) => out.push(format!("{path}: recomputed {a}, stored {b}")),
    }
}

fn check(artifact: &str, expected: &Value, actual: &Value, out: &mut Vec<Discrepancy>) {
    let mut found = Vec::new();
    compare_values("", expected, actual, &mut found);
    out.extend(found.into_iter().map(|message| Discrepancy {
        artifact: artifact.to_string(),
        message,
    }));
}

fn to_value<T: Serialize + ?Sized>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Recomputes every aggregate of `results` from its own detail rows.
pub fn verify_results(results: &RunResults) -> Vec<Discrepancy> {
    let mut out = Vec::new();
    if let Some((tables, rows)) = &results.grounding {
        let again: Vec<GroundingTable> = tables
            .iter()
            .map(|t| {
                let kinds: Vec<PromptKind> = t.cells.iter().map(|c| c.prompt_kind).collect();
                aggregate_grounding(&t.model_id, t.entity_set, &kinds, rows)
            })
            .collect();
        check("grounding", &to_value(&again), &to_value(tables), &mut out);
    }
    if let Some(r) = &results.recovery {
        check("recovery", &stripped_recovery(&aggregate_pairs(&r.pairs)), &stripped_recovery(r), &mut out);
    }
    if let Some(s) = &results.sentiment {
        let again = aggregate_sentiment(&s.provider_id, &s.details);
        check("sentiment", &stripped_sentiment(&again), &stripped_sentiment(s), &mut out);
    }
    if let Some((report, records)) = &results.swap {
        let again = aggregate_flips(&report.model_id, records, report.task_score);
        check("swap", &to_value(&again), &to_value(report), &mut out);
    }
    out
}

fn read_text(path: &Path) -> Result<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(Some(t)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn stored_aggregate(dir: &Path, table: &str) -> Result<Option<Value>> {
    let path = dir.join("tables").join(format!("{table}.json"));
    let Some(text) = read_text(&path)? else {
        return Ok(None);
    };
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(Some(v["aggregate"].clone()))
}

fn details<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Option<Vec<T>>> {
    let path = dir.join("details").join(format!("{name}.jsonl"));
    read_text(&path)?.map(|t| from_jsonl(&t, &path)).transpose()
}

fn parse_agg<T: DeserializeOwned>(artifact: &str, v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Inconsistent(format!("{artifact}: unreadable aggregate: {e}")))
}

/// Reloads a run directory from disk.
pub fn load_run(dir: &Path) -> Result<RunResults> {
    let mut r = RunResults::default();
    if let Some(agg) = stored_aggregate(dir, "grounding")? {
        let tables: Vec<GroundingTable> = parse_agg("grounding", agg)?;
        let rows = details(dir, "grounding")?.unwrap_or_default();
        r.grounding = Some((tables, rows));
    }
    r.next_word = details(dir, "next_word")?;
    if let Some(agg) = stored_aggregate(dir, "recovery")? {
        let mut rec: RecoveryResult = parse_agg("recovery", agg)?;
        rec.pairs = details::<PairScore>(dir, "recovery_pairs")?.unwrap_or_default();
        r.recovery = Some(rec);
    }
    if let Some(agg) = stored_aggregate(dir, "sentiment")? {
        let mut s: SentimentResult = parse_agg("sentiment", agg)?;
        s.details = details::<SentimentDetail>(dir, "sentiment")?.unwrap_or_default();
        r.sentiment = Some(s);
    }
    if let Some(agg) = stored_aggregate(dir, "swap_summary")? {
        let report: FlipReport = parse_agg("swap", agg)?;
        let records = details(dir, "swap")?.unwrap_or_default();
        r.swap = Some((report, records));
    }
    let corpora_dir = dir.join("corpora");
    if corpora_dir.is_dir() {
        let mut corpora = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&corpora_dir)
            .map_err(|e| Error::io(&corpora_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for p in entries {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let c: EndingCorpus = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            corpora.insert(c.given_name.clone(), c);
        }
        r.corpora = Some(corpora);
    }
    Ok(r)
}

/// Checks a run directory: every aggregate against its detail rows, and
/// every table file against a fresh rendering of the stored results.
pub fn verify_run(dir: &Path, bank: &NameBank) -> Result<Vec<Discrepancy>> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::new();
    if manifest.namebank_checksum != bank.checksum {
        out.push(Discrepancy {
            artifact: "manifest.json".into(),
            message: "name bank checksum differs from the bank used to verify".into(),
        });
    }
    let results = load_run(dir)?;
    out.extend(verify_results(&results));
    for (rel, bytes) in render(&results, bank) {
        if rel.starts_with("tables") {
            let path = dir.join(&rel);
            match std::fs::read(&path) {
                Ok(on_disk) if on_disk == bytes => {}
                Ok(_) => out.push(Discrepancy {
                    artifact: rel.display().to_string(),
                    message: "differs from a fresh rendering of the stored results".into(),
                }),
                Err(e) => out.push(Discrepancy {
                    artifact: rel.display().to_string(),
                    message: format!("unreadable: {e}"),
                }),
            }
        }
    }
    Ok(out)
}
