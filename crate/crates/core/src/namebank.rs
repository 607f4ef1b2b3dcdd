//! Given-name tables and the filters every probe draws from.
//!
//! The bundled bank (`data/namebank.tsv`) lists the 284 given names used by the
//! probes, the surname of a prominent media or historical bearer where one
//! exists, and which probes each name takes part in.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HEADER: &str =
    "given_name\tgender\tmedia_last\tmedia_freq\tcensus_rank\thistory_last\tflags";

const BUILTIN_TSV: &str = include_str!("../data/namebank.tsv");

/// Gender as recorded by the source name lists.
///
/// The sources (census tables, curated lists of public figures) only record a
/// binary value, so that is all the bank can represent. This is a limitation
/// of the data rather than a claim about gender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F" => Ok(Gender::F),
            "M" => Ok(Gender::M),
            other => Err(format!("unknown gender `{other}` (expected F or M)")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::F => "F",
            Gender::M => "M",
        })
    }
}

/// Which probes a name participates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFlag {
    Grounding,
    RecoverySentiment,
    Swap,
}

impl ProbeFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeFlag::Grounding => "grounding",
            ProbeFlag::RecoverySentiment => "recovery_sentiment",
            ProbeFlag::Swap => "swap",
        }
    }
}

impl FromStr for ProbeFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grounding" => Ok(ProbeFlag::Grounding),
            "recovery_sentiment" => Ok(ProbeFlag::RecoverySentiment),
            "swap" => Ok(ProbeFlag::Swap),
            other => Err(format!("unknown probe flag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameRecord {
    pub given_name: String,
    pub gender: Gender,
    pub media_last_name: Option<String>,
    /// Mentions in the media source.
    pub media_frequency: Option<u64>,
    pub census_rank: Option<u32>,
    pub history_last_name: Option<String>,
    pub probe_flags: BTreeSet<ProbeFlag>,
}

impl NameRecord {
    pub fn new(given_name: impl Into<String>, gender: Gender) -> Self {
        NameRecord {
            given_name: given_name.into(),
            gender,
            media_last_name: None,
            media_frequency: None,
            census_rank: None,
            history_last_name: None,
            probe_flags: BTreeSet::new(),
        }
    }

    pub fn with_media(mut self, last_name: &str) -> Self {
        self.media_last_name = Some(last_name.to_string());
        self
    }

    pub fn with_history(mut self, last_name: &str) -> Self {
        self.history_last_name = Some(last_name.to_string());
        self
    }

    pub fn with_flags(mut self, flags: &[ProbeFlag]) -> Self {
        self.probe_flags.extend(flags.iter().copied());
        self
    }

    pub fn has(&self, flag: ProbeFlag) -> bool {
        self.probe_flags.contains(&flag)
    }

    pub fn is_media_name(&self) -> bool {
        self.media_last_name.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| {
            Err(Error::Consistency {
                name: self.given_name.clone(),
                message: message.to_string(),
            })
        };
        if self.given_name.trim().is_empty() {
            return fail("empty given name");
        }
        if self.given_name.contains(['\t', '\n']) {
            return fail("given name contains a tab or newline");
        }
        if self.has(ProbeFlag::Grounding)
            && self.media_last_name.is_none()
            && self.history_last_name.is_none()
        {
            return fail("grounding flag requires a media or history last name");
        }
        if self.media_frequency.is_some() && self.media_last_name.is_none() {
            return fail("media frequency given without a media last name");
        }
        if self.census_rank == Some(0) {
            return fail("census rank must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameBank {
    pub records: Vec<NameRecord>,
    pub source_path: String,
    /// SHA-256 of the source bytes, hex encoded.
    pub checksum: String,
}

impl NameBank {
    /// The bank bundled with the crate.
    pub fn builtin() -> Self {
        parse_namebank(BUILTIN_TSV, "<builtin>").expect("bundled name bank is valid")
    }

    pub fn from_records(records: Vec<NameRecord>) -> Result<Self> {
        let text = serialize(&records);
        parse_namebank(&text, "<memory>")
    }

    pub fn get(&self, given_name: &str) -> Option<&NameRecord> {
        self.records.iter().find(|r| r.given_name == given_name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn given_names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.given_name.as_str())
    }

    pub fn to_tsv(&self) -> String {
        serialize(&self.records)
    }
}

pub fn load_namebank(path: impl AsRef<Path>) -> Result<NameBank> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_namebank(&text, &path.display().to_string())
}

pub fn parse_namebank(text: &str, source: &str) -> Result<NameBank> {
    let perr = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == HEADER => {}
        Some((_, h)) => return Err(perr(1, format!("unexpected header `{h}`"))),
        None => return Err(perr(1, "missing header".into())),
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(perr(lineno, format!("expected 7 columns, found {}", cols.len())));
        }
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let gender = cols[1].parse::<Gender>().map_err(|m| perr(lineno, m))?;
        let media_frequency = match cols[3] {
            "" => None,
            s => Some(
                s.parse::<u64>()
                    .map_err(|e| perr(lineno, format!("media_freq `{s}`: {e}")))?,
            ),
        };
        let census_rank = match cols[4] {
            "" => None,
            s => Some(
                s.parse::<u32>()
                    .map_err(|e| perr(lineno, format!("census_rank `{s}`: {e}")))?,
            ),
        };
        let mut probe_flags = BTreeSet::new();
        for f in cols[6].split(',').map(str::trim).filter(|f| !f.is_empty()) {
            probe_flags.insert(f.parse::<ProbeFlag>().map_err(|m| perr(lineno, m))?);
        }
        let record = NameRecord {
            given_name: cols[0].to_string(),
            gender,
            media_last_name: opt(cols[2]),
            media_frequency,
            census_rank,
            history_last_name: opt(cols[5]),
            probe_flags,
        };
        record.validate()?;
        if !seen.insert(record.given_name.clone()) {
            return Err(Error::DuplicateName(record.given_name));
        }
        records.push(record);
    }

    Ok(NameBank {
        records,
        source_path: source.to_string(),
        checksum: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

/// Canonical TSV form: fixed header, LF line endings, flags in a fixed order.
pub fn serialize(records: &[NameRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        let flags: Vec<&str> = r.probe_flags.iter().map(|f| f.as_str()).collect();
        let row = [
            r.given_name.clone(),
            r.gender.to_string(),
            r.media_last_name.clone().unwrap_or_default(),
            r.media_frequency.map(|v| v.to_string()).unwrap_or_default(),
            r.census_rank.map(|v| v.to_string()).unwrap_or_default(),
            r.history_last_name.clone().unwrap_or_default(),
            flags.join(","),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// Records carrying `flag`, optionally restricted to one gender, in bank order.
pub fn filter_bank(bank: &NameBank, flag: ProbeFlag, gender: Option<Gender>) -> Vec<NameRecord> {
    bank.records
        .iter()
        .filter(|r| r.has(flag) && gender.is_none_or(|g| r.gender == g))
        .cloned()
        .collect()
}

/// Every unordered same-gender pair exactly once, each pair ordered
/// `(smaller, larger)` by name and the list sorted lexicographically.
pub fn same_gender_pairs(records: &[NameRecord]) -> Vec<(NameRecord, NameRecord)> {
    let mut sorted: Vec<&NameRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.given_name.cmp(&b.given_name));
    let mut pairs = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if a.gender == b.gender && a.given_name != b.given_name {
                pairs.push(((*a).clone(), (*b).clone()));
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProbeFlag::*;

    fn tsv(rows: &[&str]) -> String {
        let mut s = format!("{HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_table_row() {
        let bank = parse_namebank(
            &tsv(&["Donald\tM\tTrump\t2844894\t15\t\tgrounding,recovery_sentiment,swap"]),
            "t",
        )
        .unwrap();
        let r = &bank.records[0];
        assert_eq!(r.given_name, "Donald");
        assert_eq!(r.gender, Gender::M);
        assert_eq!(r.media_last_name.as_deref(), Some("Trump"));
        assert_eq!(r.media_frequency, Some(2_844_894));
        assert_eq!(r.census_rank, Some(15));
        assert_eq!(r.history_last_name, None);
        assert_eq!(
            r.probe_flags,
            [Grounding, RecoverySentiment, Swap].into_iter().collect()
        );
    }

    #[test]
    fn header_only_is_empty_bank() {
        let bank = parse_namebank(&tsv(&[]), "t").unwrap();
        assert!(bank.is_empty());
    }

    #[test]
    fn grounding_without_surname_is_rejected() {
        let err = parse_namebank(&tsv(&["Emily\tF\t\t\t\t\tgrounding"]), "t").unwrap_err();
        assert!(matches!(err, Error::Consistency { .. }), "{err}");
    }

    #[test]
    fn duplicates_and_bad_rows_are_rejected() {
        let err = parse_namebank(&tsv(&["Amy\tF\t\t\t\t\t", "Amy\tF\t\t\t\t\t"]), "t").unwrap_err();
        assert!(matches!(err, Error::DuplicateName(ref n) if n == "Amy"));
        let err = parse_namebank(&tsv(&["Amy\tX\t\t\t\t\t"]), "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_namebank(&tsv(&["Amy\tF\t\t\t"]), "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_namebank(&tsv(&["Amy\tF\t\t12\t\t\t"]), "t").unwrap_err();
        assert!(matches!(err, Error::Consistency { .. }));
        assert!(parse_namebank("", "t").is_err());
    }

    #[test]
    fn builtin_bank_counts() {
        let bank = NameBank::builtin();
        assert_eq!(bank.len(), 284);
        let grounding = filter_bank(&bank, Grounding, None);
        let news = grounding.iter().filter(|r| r.media_last_name.is_some()).count();
        let history = grounding.iter().filter(|r| r.history_last_name.is_some()).count();
        // 16/71 = 22.5% and 8/64 = 12.5% in the published grounding table.
        assert_eq!(news, 71);
        assert_eq!(history, 64);
        assert!(grounding.iter().any(|r| r.given_name == "Donald"));
        assert!(grounding
            .iter()
            .any(|r| r.given_name == "Harriet" && r.history_last_name.as_deref() == Some("Tubman")));
        assert_eq!(filter_bank(&bank, RecoverySentiment, Some(Gender::F)).len(), 105);
        assert_eq!(filter_bank(&bank, RecoverySentiment, Some(Gender::M)).len(), 114);
        assert_eq!(filter_bank(&bank, Swap, Some(Gender::F)).len(), 49);
        assert_eq!(filter_bank(&bank, Swap, Some(Gender::M)).len(), 49);
        let benjamin = bank.get("Benjamin").unwrap();
        assert_eq!(benjamin.media_last_name.as_deref(), Some("Netanyahu"));
        assert_eq!(benjamin.history_last_name.as_deref(), Some("Franklin"));
    }

    #[test]
    fn filter_by_gender() {
        let bank = NameBank::builtin();
        let f = filter_bank(&bank, Swap, Some(Gender::F));
        assert!(f.iter().all(|r| r.gender == Gender::F && r.has(Swap)));
        let empty = NameBank::from_records(vec![]).unwrap();
        assert!(filter_bank(&empty, Grounding, None).is_empty());
    }

    #[test]
    fn pair_enumeration() {
        let recs = vec![
            NameRecord::new("C", Gender::F),
            NameRecord::new("A", Gender::F),
            NameRecord::new("D", Gender::F),
            NameRecord::new("B", Gender::F),
        ];
        let names: Vec<String> = same_gender_pairs(&recs)
            .iter()
            .map(|(a, b)| format!("{}{}", a.given_name, b.given_name))
            .collect();
        assert_eq!(names, ["AB", "AC", "AD", "BC", "BD", "CD"]);

        let mixed = vec![
            NameRecord::new("F1", Gender::F),
            NameRecord::new("F2", Gender::F),
            NameRecord::new("F3", Gender::F),
            NameRecord::new("M1", Gender::M),
            NameRecord::new("M2", Gender::M),
        ];
        assert_eq!(same_gender_pairs(&mixed).len(), 4);
        assert!(same_gender_pairs(&mixed[..1]).is_empty());
    }
}
